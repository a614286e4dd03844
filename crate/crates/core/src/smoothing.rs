//! 1€ filter: a first-order low-pass whose cutoff grows with the filtered
//! speed of the signal.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct OneEuroParams {
    /// Cutoff at zero speed, Hz.
    pub min_cutoff: f64,
    /// Cutoff increase per unit of speed.
    pub beta: f64,
    /// Cutoff of the derivative filter, Hz.
    pub d_cutoff: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        Self {
            min_cutoff: 1.0,
            beta: 0.5,
            d_cutoff: 1.0,
        }
    }
}

impl OneEuroParams {
    pub fn new(min_cutoff: f64, beta: f64, d_cutoff: f64) -> Result<Self> {
        if !(min_cutoff > 0.0 && d_cutoff > 0.0 && beta >= 0.0)
            || !(min_cutoff.is_finite() && d_cutoff.is_finite() && beta.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "1€ filter needs min_cutoff > 0, d_cutoff > 0, beta >= 0 (got {min_cutoff}, {d_cutoff}, {beta})"
            )));
        }
        Ok(Self {
            min_cutoff,
            beta,
            d_cutoff,
        })
    }
}

#[derive(Deserialize)]
struct RawParams {
    min_cutoff: f64,
    beta: f64,
    d_cutoff: f64,
}

impl TryFrom<RawParams> for OneEuroParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        Self::new(r.min_cutoff, r.beta, r.d_cutoff)
    }
}

/// Smoothing factor of an exponential filter with `cutoff` Hz sampled every `dt` s.
fn alpha(cutoff: f64, dt: f64) -> f64 {
    let tau = 1.0 / (TAU * cutoff);
    1.0 / (1.0 + tau / dt)
}

#[derive(Debug, Clone, PartialEq)]
struct FilterState {
    raw: Vec<f64>,
    value: Vec<f64>,
    derivative: Vec<f64>,
    timestamp: f64,
}

/// Multi-channel 1€ filter.
#[derive(Debug, Clone, PartialEq)]
pub struct OneEuroFilter {
    params: OneEuroParams,
    state: Option<FilterState>,
}

impl OneEuroFilter {
    pub fn new(params: OneEuroParams) -> Self {
        Self {
            params,
            state: None,
        }
    }

    pub fn params(&self) -> &OneEuroParams {
        &self.params
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Filters `sample` taken at time `t` (seconds). The first call returns
    /// the sample unchanged.
    pub fn step(&mut self, sample: &[f64], t: f64) -> Result<Vec<f64>> {
        let Some(state) = self.state.as_mut() else {
            self.state = Some(FilterState {
                raw: sample.to_vec(),
                value: sample.to_vec(),
                derivative: vec![0.0; sample.len()],
                timestamp: t,
            });
            return Ok(sample.to_vec());
        };
        if !(t > state.timestamp) {
            return Err(Error::InvalidTimestamp {
                previous: state.timestamp,
                got: t,
            });
        }
        if sample.len() != state.value.len() {
            return Err(Error::InvalidInput(format!(
                "filter has {} channels, sample has {}",
                state.value.len(),
                sample.len()
            )));
        }
        let dt = t - state.timestamp;
        let a_d = alpha(self.params.d_cutoff, dt);
        for (i, &x) in sample.iter().enumerate() {
            let raw_derivative = (x - state.raw[i]) / dt;
            let d = state.derivative[i] + a_d * (raw_derivative - state.derivative[i]);
            let cutoff = self.params.min_cutoff + self.params.beta * d.abs();
            let a = alpha(cutoff, dt);
            state.value[i] += a * (x - state.value[i]);
            state.derivative[i] = d;
            state.raw[i] = x;
        }
        state.timestamp = t;
        Ok(state.value.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(
        params: OneEuroParams,
        signal: impl Fn(f64) -> f64,
        n: usize,
        rate: f64,
    ) -> Vec<(f64, f64)> {
        let mut f = OneEuroFilter::new(params);
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let x = signal(t);
                (x, f.step(&[x], t).unwrap()[0])
            })
            .collect()
    }

    fn cumulative_lag(out: &[(f64, f64)]) -> f64 {
        out.iter().map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn first_sample_passes_through() {
        let mut f = OneEuroFilter::new(OneEuroParams::default());
        assert_eq!(f.step(&[1.5, -2.0], 0.0).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn constant_input_is_fixed_point() {
        for (x, y) in run(OneEuroParams::default(), |_| 3.25, 100, 30.0) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn step_response_converges_monotonically_without_beta() {
        let params = OneEuroParams::new(1.0, 0.0, 1.0).unwrap();
        let out = run(params, |t| if t > 0.0 { 1.0 } else { 0.0 }, 100, 30.0);
        let mut prev = 0.0;
        for &(_, y) in &out[1..] {
            assert!(y > prev && y < 1.0);
            prev = y;
        }
        assert!(1.0 - prev < 1e-6);
    }

    #[test]
    fn speed_coefficient_reduces_ramp_lag() {
        let ramp = |t: f64| 50.0 * t;
        let slow = run(OneEuroParams::new(1.0, 0.0, 1.0).unwrap(), ramp, 60, 30.0);
        let fast = run(OneEuroParams::new(1.0, 0.5, 1.0).unwrap(), ramp, 60, 30.0);
        assert!(cumulative_lag(&fast) < cumulative_lag(&slow));
    }

    #[test]
    fn timestamps_must_increase() {
        let mut f = OneEuroFilter::new(OneEuroParams::default());
        f.step(&[0.0], 1.0).unwrap();
        assert!(matches!(
            f.step(&[0.0], 1.0),
            Err(Error::InvalidTimestamp { .. })
        ));
        assert!(f.step(&[0.0], 0.5).is_err());
        assert!(f.step(&[0.0, 1.0], 2.0).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(OneEuroParams::new(0.0, 0.5, 1.0).is_err());
        assert!(OneEuroParams::new(1.0, -0.1, 1.0).is_err());
        assert!(OneEuroParams::new(1.0, 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn output_stays_within_running_range(samples in proptest::collection::vec(-100.0f64..100.0, 1..80), beta in 0.0f64..2.0) {
            let mut f = OneEuroFilter::new(OneEuroParams::new(1.0, beta, 1.0).unwrap());
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, x) in samples.iter().enumerate() {
                lo = lo.min(*x);
                hi = hi.max(*x);
                let y = f.step(&[*x], i as f64 / 30.0).unwrap()[0];
                prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
            }
        }

        #[test]
        fn higher_min_cutoff_never_lags_more(c1 in 0.1f64..10.0, extra in 0.0f64..10.0, beta in 0.0f64..1.0) {
            let ramp = |t: f64| 20.0 * t;
            let low = run(OneEuroParams::new(c1, beta, 1.0).unwrap(), ramp, 45, 30.0);
            let high = run(OneEuroParams::new(c1 + extra, beta, 1.0).unwrap(), ramp, 45, 30.0);
            prop_assert!(cumulative_lag(&high) <= cumulative_lag(&low) + 1e-9);
        }
    }
}
