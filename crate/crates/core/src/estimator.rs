//! Forecasting the current frame's action-level scores from recent frames.
//!
//! Two smoothers are available. The exponential moving average keeps one
//! accumulator, seeded with the first observation. The decaying window
//! keeps the last `w` observations and returns the unnormalized sum
//! `sum_{i=1..w} gamma^i * S[t-i]`; missing history terms count as zero.
//! Only the ranking of the estimate is consumed downstream, so the missing
//! normalization is harmless.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    Ema,
    #[default]
    #[serde(alias = "decay-window")]
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    /// EMA smoothing factor.
    pub alpha: f64,
    /// Window size `w`; also the warm-start length.
    pub window: usize,
    /// Per-step decay `gamma` of the window average.
    pub gamma: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { mode: EstimatorMode::Window, alpha: 0.5, window: 3, gamma: 0.8 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::out_of_range("alpha", self.alpha, "[0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::out_of_range("gamma", self.gamma, "[0, 1]"));
        }
        if self.window == 0 {
            return Err(Error::out_of_range("window", 0, ">= 1"));
        }
        Ok(())
    }
}

/// Per-episode smoothing state. Create a fresh one at every episode boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    config: EstimatorConfig,
    history: VecDeque<ScoreVector>,
    ema: Option<ScoreVector>,
    frames_seen: u64,
}

impl EstimatorState {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(EstimatorState { config, history: VecDeque::with_capacity(config.window), ema: None, frames_seen: 0 })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Stored observations, oldest first.
    pub fn history(&self) -> impl ExactSizeIterator<Item = &ScoreVector> {
        self.history.iter()
    }

    pub fn ema_value(&self) -> Option<&ScoreVector> {
        self.ema.as_ref()
    }

    /// Patch count fixed by the first observation.
    pub fn m(&self) -> Option<usize> {
        self.history.back().map(ScoreVector::len)
    }

    /// Records the decode-stage scores measured at the frame just finished.
    pub fn observe(&mut self, observed: ScoreVector) -> Result<()> {
        if let Some(m) = self.m() {
            if observed.len() != m {
                return Err(Error::shape("observed action scores", m, observed.len()));
            }
        }

        if self.config.mode == EstimatorMode::Ema {
            let alpha = self.config.alpha;
            let next = match self.ema.take() {
                None => observed.clone(),
                Some(prev) => ScoreVector::new(
                    prev.as_slice()
                        .iter()
                        .zip(observed.as_slice())
                        .map(|(p, o)| (1.0 - alpha) * p + alpha * o)
                        .collect(),
                )?,
            };
            self.ema = Some(next);
        }

        if self.history.len() == self.config.window {
            self.history.pop_front();
        }
        self.history.push_back(observed);
        self.frames_seen += 1;
        Ok(())
    }

    pub fn ema_estimate(&self) -> Result<ScoreVector> {
        match &self.ema {
            Some(v) => Ok(v.clone()),
            None if self.frames_seen == 0 => Err(Error::NoObservations),
            None => Err(Error::invalid("ema_estimate", "estimator is not in EMA mode")),
        }
    }

    pub fn window_estimate(&self) -> Result<ScoreVector> {
        let newest = self.history.back().ok_or(Error::NoObservations)?;
        let gamma = self.config.gamma;
        let mut acc = vec![0.0; newest.len()];
        let mut weight = 1.0;
        // i = 1 is the newest frame (t - 1).
        for obs in self.history.iter().rev() {
            weight *= gamma;
            for (a, v) in acc.iter_mut().zip(obs.as_slice()) {
                *a += weight * v;
            }
        }
        ScoreVector::new(acc)
    }

    /// Estimate for the configured mode.
    pub fn estimate(&self) -> Result<ScoreVector> {
        match self.config.mode {
            EstimatorMode::Ema => self.ema_estimate(),
            EstimatorMode::Window => self.window_estimate(),
        }
    }

    /// Warm once `window` frames have been observed.
    pub fn is_warm(&self) -> bool {
        self.frames_seen >= self.config.window as u64
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.ema = None;
        self.frames_seen = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn window(w: usize, gamma: f64) -> EstimatorState {
        EstimatorState::new(EstimatorConfig { mode: EstimatorMode::Window, window: w, gamma, ..Default::default() })
            .unwrap()
    }

    fn ema(alpha: f64) -> EstimatorState {
        EstimatorState::new(EstimatorConfig { mode: EstimatorMode::Ema, alpha, ..Default::default() }).unwrap()
    }

    #[test]
    fn first_observation() {
        let mut s = window(3, 0.8);
        s.observe(sv(&[0.1, 0.9])).unwrap();
        assert_eq!(s.history().cloned().collect::<Vec<_>>(), vec![sv(&[0.1, 0.9])]);
        assert_eq!(s.frames_seen(), 1);
        assert!(s.ema_value().is_none());
    }

    #[test]
    fn evicts_oldest() {
        let mut s = window(3, 0.8);
        for i in 0..4 {
            s.observe(sv(&[i as f64])).unwrap();
        }
        let kept: Vec<f64> = s.history().map(|v| v.as_slice()[0]).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.frames_seen(), 4);
    }

    #[test]
    fn length_mismatch() {
        let mut s = window(3, 0.8);
        s.observe(sv(&[0.1, 0.2])).unwrap();
        assert!(matches!(s.observe(sv(&[0.1])), Err(Error::Shape { .. })));
    }

    #[test]
    fn ema_hand_values() {
        let mut s = ema(0.5);
        s.observe(sv(&[0.2])).unwrap();
        s.observe(sv(&[0.6])).unwrap();
        assert!((s.ema_estimate().unwrap().as_slice()[0] - 0.4).abs() < 1e-15);

        let mut s = ema(0.5);
        s.observe(sv(&[0.2, 0.8])).unwrap();
        s.observe(sv(&[0.4, 0.6])).unwrap();
        let e = s.ema_estimate().unwrap();
        assert!((e.as_slice()[0] - 0.3).abs() < 1e-15);
        assert!((e.as_slice()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ema_boundary_alphas() {
        let mut one = ema(1.0);
        let mut zero = ema(0.0);
        for v in [[0.3, 0.1], [0.5, 0.9], [0.2, 0.4]] {
            one.observe(sv(&v)).unwrap();
            zero.observe(sv(&v)).unwrap();
        }
        assert_eq!(one.ema_estimate().unwrap(), sv(&[0.2, 0.4]));
        assert_eq!(zero.ema_estimate().unwrap(), sv(&[0.3, 0.1]));
    }

    #[test]
    fn estimates_need_history() {
        assert_eq!(ema(0.5).ema_estimate(), Err(Error::NoObservations));
        assert_eq!(window(3, 0.8).window_estimate(), Err(Error::NoObservations));
    }

    #[test]
    fn window_hand_values() {
        let mut s = window(1, 0.8);
        s.observe(sv(&[1.0, 0.5])).unwrap();
        s.observe(sv(&[0.5, 0.25])).unwrap();
        assert_eq!(s.window_estimate().unwrap(), sv(&[0.4, 0.2]));

        let mut s = window(3, 0.8);
        for _ in 0..5 {
            s.observe(sv(&[1.0])).unwrap();
        }
        assert!((s.window_estimate().unwrap().as_slice()[0] - 1.952).abs() < 1e-12);

        let mut s = window(3, 0.0);
        s.observe(sv(&[1.0, 3.0])).unwrap();
        assert_eq!(s.window_estimate().unwrap(), sv(&[0.0, 0.0]));
    }

    #[test]
    fn window_truncates_missing_terms() {
        let mut s = window(3, 0.5);
        s.observe(sv(&[4.0])).unwrap();
        s.observe(sv(&[2.0])).unwrap();
        // 0.5 * 2 + 0.25 * 4
        assert!((s.window_estimate().unwrap().as_slice()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn warm_start() {
        let mut s = window(3, 0.8);
        assert!(!s.is_warm());
        s.observe(sv(&[1.0])).unwrap();
        s.observe(sv(&[1.0])).unwrap();
        assert!(!s.is_warm());
        s.observe(sv(&[1.0])).unwrap();
        assert!(s.is_warm());
        s.reset();
        assert!(!s.is_warm());
        assert_eq!(s.frames_seen(), 0);
    }

    #[test]
    fn config_validation() {
        for cfg in [
            EstimatorConfig { alpha: 1.5, ..Default::default() },
            EstimatorConfig { gamma: -0.1, ..Default::default() },
            EstimatorConfig { window: 0, ..Default::default() },
        ] {
            assert!(EstimatorState::new(cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn ema_stays_within_observed_range(
            alpha in 0.0f64..=1.0,
            obs in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3), 1..12),
        ) {
            let mut s = ema(alpha);
            for o in &obs {
                s.observe(sv(o)).unwrap();
            }
            let e = s.ema_estimate().unwrap();
            for j in 0..3 {
                let lo = obs.iter().map(|o| o[j]).fold(f64::INFINITY, f64::min);
                let hi = obs.iter().map(|o| o[j]).fold(f64::NEG_INFINITY, f64::max);
                let v = e.as_slice()[j];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn window_is_homogeneous(
            c in 0.01f64..100.0,
            obs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..6),
        ) {
            let mut a = window(3, 0.8);
            let mut b = window(3, 0.8);
            for o in &obs {
                a.observe(sv(o)).unwrap();
                b.observe(sv(o).scaled(c).unwrap()).unwrap();
            }
            let ea = a.window_estimate().unwrap();
            let eb = b.window_estimate().unwrap();
            for (x, y) in ea.as_slice().iter().zip(eb.as_slice()) {
                prop_assert!((x * c - y).abs() <= 1e-12 * (x * c).abs().max(1e-12));
            }
        }

        #[test]
        fn constant_history_scales_by_geometric_sum(
            v in prop::collection::vec(0.0f64..1.0, 4),
            w in 1usize..6,
            gamma in 0.0f64..=1.0,
        ) {
            let mut s = window(w, gamma);
            for _ in 0..w + 2 {
                s.observe(sv(&v)).unwrap();
            }
            let factor: f64 = (1..=w).map(|i| gamma.powi(i as i32)).sum();
            let e = s.window_estimate().unwrap();
            for (x, y) in e.as_slice().iter().zip(&v) {
                prop_assert!((x - y * factor).abs() < 1e-12);
            }
        }
    }
}
