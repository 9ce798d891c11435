//! Engine configuration shared by the speculation and simulation layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::speculation::adaptive_max_spec;

/// Which nodes are eligible when the expansion picks its next draft token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontierMode {
    /// Children of every node already in the speculation tree. Allows the
    /// branching trees needed to hedge alternatives (default).
    AllNodes,
    /// Children of current leaves only; kept for comparison runs.
    LeavesOnly,
}

/// Fallback speculator selection for steps where suffix speculation scores
/// at or below tau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackConfig {
    /// No fallback configured; low-score steps degenerate to vanilla decode.
    None,
    /// Chain speculator that proposes `chain_len` tokens per step with a
    /// target mean of `mean_accept` accepted tokens, for threshold studies.
    Synthetic { chain_len: usize, mean_accept: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Max speculation factor: budget per candidate is `floor(alpha * p)`.
    pub alpha: f64,
    /// Longest pattern length tried when anchoring speculation.
    pub max_pattern_len: usize,
    /// Depth cap of both suffix trees.
    pub depth_cap: usize,
    /// Score threshold: suffix drafts are used only when score > tau.
    pub tau: f64,
    /// When set, overrides the adaptive budget with a fixed node budget.
    pub constant_max_spec: Option<usize>,
    pub frontier: FrontierMode,
    pub fallback: FallbackConfig,
    pub use_global: bool,
    pub use_per_request: bool,
    /// Also insert evaluation prompts into the global tree at request start.
    pub include_prompts_in_global: bool,
    /// Insert each completed response into the global tree before the next
    /// request (forces sequential processing).
    pub online_adapt: bool,
    /// Global-tree capacity in tokens; oldest sequences are evicted past it.
    pub evict_capacity: Option<u64>,
    pub seed: u64,
    /// Worker threads for independent requests; effective only when nothing
    /// mutates the global tree mid-run.
    pub jobs: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            max_pattern_len: 32,
            depth_cap: 64,
            tau: 0.0,
            constant_max_spec: None,
            frontier: FrontierMode::AllNodes,
            fallback: FallbackConfig::None,
            use_global: true,
            use_per_request: true,
            include_prompts_in_global: false,
            online_adapt: false,
            evict_capacity: None,
            seed: 0,
            jobs: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if self.max_pattern_len == 0 {
            return Err(Error::InvalidConfig("max_pattern_len must be >= 1".into()));
        }
        if self.depth_cap == 0 {
            return Err(Error::InvalidConfig("depth_cap must be >= 1".into()));
        }
        if self.max_pattern_len > self.depth_cap {
            return Err(Error::InvalidConfig(
                "max_pattern_len must not exceed depth_cap".into(),
            ));
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be non-negative".into()));
        }
        if self.constant_max_spec == Some(0) {
            return Err(Error::InvalidConfig("constant_max_spec must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be >= 1".into()));
        }
        if let FallbackConfig::Synthetic {
            chain_len,
            mean_accept,
        } = self.fallback
        {
            if chain_len == 0 {
                return Err(Error::InvalidConfig("fallback chain_len must be >= 1".into()));
            }
            if !(0.0..=chain_len as f64).contains(&mean_accept) {
                return Err(Error::InvalidConfig(
                    "fallback mean_accept must lie in [0, chain_len]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Node budget (anchor included) for a pattern of length `p`.
    pub fn max_spec_budget(&self, p: usize) -> usize {
        match self.constant_max_spec {
            Some(k) => k.max(1),
            None => adaptive_max_spec(p, self.alpha),
        }
    }

    /// Whether this run must process requests one at a time.
    pub fn requires_sequential(&self) -> bool {
        self.online_adapt || self.include_prompts_in_global
    }

    pub fn has_fallback(&self) -> bool {
        self.fallback != FallbackConfig::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_rejected() {
        let mut cfg = EngineConfig::default();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = EngineConfig::default();
        cfg.max_pattern_len = 128;
        cfg.depth_cap = 64;
        assert!(cfg.validate().is_err());

        let mut cfg = EngineConfig::default();
        cfg.tau = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = EngineConfig::default();
        cfg.fallback = FallbackConfig::Synthetic {
            chain_len: 4,
            mean_accept: 9.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constant_budget_overrides_adaptive() {
        let mut cfg = EngineConfig::default();
        cfg.alpha = 2.0;
        assert_eq!(cfg.max_spec_budget(3), 6);
        cfg.constant_max_spec = Some(9);
        assert_eq!(cfg.max_spec_budget(3), 9);
        assert_eq!(cfg.max_spec_budget(100), 9);
    }
}
