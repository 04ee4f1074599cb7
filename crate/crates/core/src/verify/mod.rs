//! Oracle-equivalence suites behind the `verify` subcommand. Each oracle is
//! a deliberately naive re-derivation of the production code path.

mod losses;
mod metrics;
mod representation;
mod sampler;
mod simulator;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use metrics::{enumerate_greedy_matches, oracle_average_precision};
pub use simulator::{fine_step_events, OracleEvent, ORACLE_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Simulator,
    Representation,
    Losses,
    Sampler,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Simulator,
        Suite::Representation,
        Suite::Losses,
        Suite::Sampler,
        Suite::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Simulator => "simulator",
            Suite::Representation => "representation",
            Suite::Losses => "losses",
            Suite::Sampler => "sampler",
            Suite::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| crate::Error::InvalidInput(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub(crate) fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    /// Folds an error into a failed check.
    pub(crate) fn from_result(name: &str, r: crate::Result<String>) -> Self {
        match r {
            Ok(detail) => Self::new(name, true, detail),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::Simulator => simulator::run(seed),
        Suite::Representation => representation::run(seed),
        Suite::Losses => losses::run(seed),
        Suite::Sampler => sampler::run(seed),
        Suite::Metrics => metrics::run(seed),
    };
    SuiteReport {
        suite,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for s in Suite::ALL {
            let r = run_suite(s, 11);
            assert!(r.passed(), "{:#?}", r);
        }
    }
}
