use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowPattern {
    Constant,
    MultimodalGaussian,
    PeakTransition,
    HolidayRush,
}

impl FlowPattern {
    pub fn parse(name: &str) -> Result<FlowPattern> {
        match name {
            "constant" => Ok(FlowPattern::Constant),
            "multimodal_gaussian" => Ok(FlowPattern::MultimodalGaussian),
            "peak_transition" => Ok(FlowPattern::PeakTransition),
            "holiday_rush" => Ok(FlowPattern::HolidayRush),
            other => Err(Error::InvalidFlow(format!("unknown pattern `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowPattern::Constant => "constant",
            FlowPattern::MultimodalGaussian => "multimodal_gaussian",
            FlowPattern::PeakTransition => "peak_transition",
            FlowPattern::HolidayRush => "holiday_rush",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub peak_time: f64,
    pub std: f64,
    pub weight: f64,
}

/// Network-wide demand over an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub pattern: FlowPattern,
    /// Vehicles per second, network-wide.
    pub min_rate: f64,
    pub max_rate: f64,
    #[serde(default)]
    pub components: Vec<GaussianComponent>,
    pub seed: u64,
}

impl FlowSpec {
    pub fn constant(rate: f64, seed: u64) -> FlowSpec {
        FlowSpec { pattern: FlowPattern::Constant, min_rate: rate, max_rate: rate, components: Vec::new(), seed }
    }

    /// Default component layout for a pattern over an episode of `horizon` seconds.
    pub fn default_components(pattern: FlowPattern, horizon: f64) -> Vec<GaussianComponent> {
        let g = |peak: f64, std: f64, weight: f64| GaussianComponent { peak_time: peak * horizon, std: std * horizon, weight };
        match pattern {
            FlowPattern::Constant | FlowPattern::PeakTransition => Vec::new(),
            FlowPattern::MultimodalGaussian => alloc::vec![g(0.2, 0.08, 0.3), g(0.5, 0.1, 0.4), g(0.8, 0.08, 0.3)],
            FlowPattern::HolidayRush => alloc::vec![g(0.35, 0.1, 0.5), g(0.7, 0.1, 0.5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_rate > 0.0 && self.min_rate <= self.max_rate && self.max_rate.is_finite()) {
            return Err(Error::InvalidFlow(format!(
                "need 0 < min_rate <= max_rate, got {} / {}",
                self.min_rate, self.max_rate
            )));
        }
        let uses_components = matches!(self.pattern, FlowPattern::MultimodalGaussian | FlowPattern::HolidayRush);
        if uses_components {
            if self.components.is_empty() {
                return Err(Error::InvalidFlow(format!("{} needs Gaussian components", self.pattern.name())));
            }
            let total: f64 = self.components.iter().map(|c| c.weight).sum();
            if libm::fabs(total - 1.0) > 1e-9 {
                return Err(Error::InvalidFlow(format!("component weights sum to {total}, expected 1")));
            }
            if self.components.iter().any(|c| !(c.std > 0.0) || c.weight < 0.0) {
                return Err(Error::InvalidFlow("component std must be > 0 and weight >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Arrival-rate schedule with the pattern's shape normalized to peak 1 over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProfile {
    spec: FlowSpec,
    horizon: f64,
    peak: f64,
}

impl FlowProfile {
    pub fn new(spec: FlowSpec, horizon: f64) -> Result<FlowProfile> {
        spec.validate()?;
        let mut profile = FlowProfile { spec, horizon, peak: 1.0 };
        let steps = libm::ceil(horizon) as usize;
        let peak = (0..=steps).map(|t| profile.raw_shape(t as f64)).fold(0.0, f64::max);
        profile.peak = if peak > 0.0 { peak } else { 1.0 };
        Ok(profile)
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    fn gaussian_mix(&self, t: f64) -> f64 {
        self.spec
            .components
            .iter()
            .map(|c| {
                let z = (t - c.peak_time) / c.std;
                c.weight * libm::exp(-0.5 * z * z) / c.std
            })
            .sum()
    }

    fn raw_shape(&self, t: f64) -> f64 {
        match self.spec.pattern {
            FlowPattern::Constant => 0.0,
            FlowPattern::MultimodalGaussian => self.gaussian_mix(t),
            FlowPattern::PeakTransition => {
                let width = self.horizon / 40.0;
                1.0 / (1.0 + libm::exp(-(t - 0.5 * self.horizon) / width))
            }
            FlowPattern::HolidayRush => {
                // Elevated baseline plus surges; the baseline is half the mixture's own peak.
                let mix = self.gaussian_mix(t);
                let mix_peak = self.spec.components.iter().map(|c| c.weight / c.std).fold(0.0, f64::max);
                0.5 * mix_peak + mix
            }
        }
    }

    /// Mixture value in [0, 1].
    pub fn shape(&self, t: f64) -> f64 {
        (self.raw_shape(t) / self.peak).clamp(0.0, 1.0)
    }

    /// Network-wide arrival rate at time `t`, vehicles per second.
    pub fn rate(&self, t: f64) -> f64 {
        self.spec.min_rate + (self.spec.max_rate - self.spec.min_rate) * self.shape(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_rates_are_flat() {
        let mut spec = FlowSpec::constant(0.02, 1);
        spec.pattern = FlowPattern::MultimodalGaussian;
        spec.components = FlowSpec::default_components(spec.pattern, 3600.0);
        let p = FlowProfile::new(spec, 3600.0).unwrap();
        for t in (0..3600).step_by(37) {
            assert_eq!(p.rate(t as f64), 0.02);
        }
    }

    #[test]
    fn rates_bounded_by_min_max() {
        for pattern in [
            FlowPattern::Constant,
            FlowPattern::MultimodalGaussian,
            FlowPattern::PeakTransition,
            FlowPattern::HolidayRush,
        ] {
            let spec = FlowSpec {
                pattern,
                min_rate: 0.018,
                max_rate: 0.038,
                components: FlowSpec::default_components(pattern, 3600.0),
                seed: 0,
            };
            let p = FlowProfile::new(spec, 3600.0).unwrap();
            let mut hi: f64 = 0.0;
            for t in 0..=3600 {
                let r = p.rate(t as f64);
                assert!((0.018..=0.038).contains(&r), "{pattern:?} t={t} r={r}");
                hi = hi.max(r);
            }
            if pattern != FlowPattern::Constant {
                assert!((hi - 0.038).abs() < 1e-12, "{pattern:?} peak {hi}");
            }
        }
    }

    #[test]
    fn validation() {
        assert!(FlowSpec::constant(0.0, 0).validate().is_err());
        let mut s = FlowSpec::constant(0.1, 0);
        s.max_rate = 0.05;
        assert!(s.validate().is_err());
        let mut g = FlowSpec::constant(0.1, 0);
        g.pattern = FlowPattern::MultimodalGaussian;
        g.components = alloc::vec![GaussianComponent { peak_time: 10.0, std: 1.0, weight: 0.7 }];
        assert!(g.validate().is_err());
        assert!(FlowPattern::parse("rush").is_err());
    }
}
