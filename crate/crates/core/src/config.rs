//! Analysis parameters.

use serde::{Deserialize, Serialize};

use crate::episode::MIN_ANSWER_RATE;
use crate::model::HealthyRanges;
use crate::season::SeasonConfig;
use crate::store::DayClock;

/// Rational fraction of the analyzed span used for learning. Kept rational
/// so that e.g. 2/3 of 63 days is exactly 42.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFraction {
    pub numerator: u32,
    pub denominator: u32,
}

impl Default for SplitFraction {
    fn default() -> Self {
        Self { numerator: 2, denominator: 3 }
    }
}

impl SplitFraction {
    /// `ceil(days * numerator / denominator)`.
    pub fn learning_days(&self, days: usize) -> usize {
        let num = days as u64 * u64::from(self.numerator);
        let den = u64::from(self.denominator);
        num.div_ceil(den) as usize
    }
}

/// Which days feed the PEF/FEV1 baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineWindow {
    #[default]
    Deployment,
    /// The learning period of the default split.
    LearningPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub healthy: HealthyRanges,
    /// Days inspected before an unexplained episode (K).
    pub prolonged_window: u32,
    /// Unhealthy days within the window needed to call it prolonged (M).
    pub prolonged_min: u32,
    /// Pollen runs shorter than this are merged into a neighbour (S).
    pub pollen_smoothing_days: u32,
    pub min_learning_episodes: usize,
    pub learning_split: SplitFraction,
    pub min_answer_rate: f64,
    pub baseline_window: BaselineWindow,
    pub seasons: SeasonConfig,
    pub clock: DayClock,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            healthy: HealthyRanges::default(),
            prolonged_window: 7,
            prolonged_min: 5,
            pollen_smoothing_days: 3,
            min_learning_episodes: 8,
            learning_split: SplitFraction::default(),
            min_answer_rate: MIN_ANSWER_RATE,
            baseline_window: BaselineWindow::default(),
            seasons: SeasonConfig::default(),
            clock: DayClock::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.healthy.validate()?;
        self.seasons.validate()?;
        if self.prolonged_window == 0 {
            return Err("prolonged_window must be >= 1".into());
        }
        if self.prolonged_min == 0 || self.prolonged_min > self.prolonged_window {
            return Err(format!(
                "prolonged_min must be in 1..={}, got {}",
                self.prolonged_window, self.prolonged_min
            ));
        }
        if self.pollen_smoothing_days == 0 {
            return Err("pollen_smoothing_days must be >= 1".into());
        }
        let SplitFraction { numerator, denominator } = self.learning_split;
        if denominator == 0 || numerator == 0 || numerator >= denominator {
            return Err(format!("learning_split must be in (0, 1), got {numerator}/{denominator}"));
        }
        if !(0.0..=1.0).contains(&self.min_answer_rate) {
            return Err(format!("min_answer_rate must be in [0, 1], got {}", self.min_answer_rate));
        }
        if self.clock.utc_offset_minutes.abs() >= 24 * 60 {
            return Err("utc offset must be within one day".into());
        }
        Ok(())
    }
}
