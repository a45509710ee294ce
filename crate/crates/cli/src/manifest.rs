//! Replayable record of an invocation: the job with every default resolved.

use mtt_core::sim::{parse_toml, ScenarioConfig};
use mtt_core::study::{ConsensusStudy, StudyPlan};
use mtt_core::{FilterKind, MttError};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub code_version: String,
    pub job: Job,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Job {
    Run {
        filters: Vec<FilterKind>,
        seed: u64,
        parallel: bool,
        record_timing: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_s: Option<f64>,
        /// Fully resolved, trajectories included.
        scenario: ScenarioConfig,
    },
    NoiseStudy {
        parallel: bool,
        record_timing: bool,
        plan: StudyPlan,
    },
    ScalingStudy {
        filters: Vec<FilterKind>,
        targets: Vec<usize>,
        repetitions: usize,
        seed: u64,
        timeout_s: f64,
        jpdaf_max_targets: usize,
        template: ScenarioConfig,
    },
    ConsensusStudy {
        /// Gaussian noise fractions, one study each.
        levels: Vec<f64>,
        study: ConsensusStudy,
    },
}

impl Manifest {
    pub fn new(job: Job) -> Self {
        Self { code_version: env!("CARGO_PKG_VERSION").to_string(), job }
    }

    pub fn parse(src: &str) -> Result<Self, MttError> {
        parse_toml(src)
    }

    pub fn to_toml(&self) -> Result<String, MttError> {
        toml::to_string(self).map_err(|e| MttError::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtt_core::builtin_crossing_scenario;

    #[test]
    fn round_trips_through_toml() {
        let m = Manifest::new(Job::Run {
            filters: FilterKind::ALL.to_vec(),
            seed: 7,
            parallel: false,
            record_timing: false,
            timeout_s: None,
            scenario: builtin_crossing_scenario(3, 1.0, 7).unwrap(),
        });
        let text = m.to_toml().unwrap();
        assert_eq!(Manifest::parse(&text).unwrap(), m);

        let m = Manifest::new(Job::NoiseStudy { parallel: true, record_timing: false, plan: StudyPlan::preset_noise_study() });
        assert_eq!(Manifest::parse(&m.to_toml().unwrap()).unwrap(), m);
    }

    #[test]
    fn parse_errors_have_positions() {
        let err = Manifest::parse("code_version = \"0\"\n[job]\nkind = 12\n").unwrap_err();
        assert!(matches!(err, MttError::Parse { line: 3, .. }), "{err:?}");
    }
}
