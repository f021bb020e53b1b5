use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::FeatureConfig;
use crate::Error;

/// The three recognition tasks sharing one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Single-label scene classification.
    Asc,
    /// Multi-label tagging.
    Ust,
    /// Anomaly detection via a section classifier trained on normal clips.
    Asd,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Asc, Task::Ust, Task::Asd];

    pub fn name(self) -> &'static str {
        match self {
            Task::Asc => "asc",
            Task::Ust => "ust",
            Task::Asd => "asd",
        }
    }

    pub fn feature_config(self) -> FeatureConfig {
        match self {
            Task::Asc => FeatureConfig::asc(),
            Task::Ust => FeatureConfig::ust(),
            Task::Asd => FeatureConfig::asd(),
        }
    }

    pub fn is_multilabel(self) -> bool {
        self == Task::Ust
    }

    /// Frames seen by the network per example.
    pub fn input_frames(self) -> usize {
        match self {
            Task::Asd => crate::features::ASD_WINDOW,
            _ => self.feature_config().target_frames,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task {s:?} (expected asc, ust or asd)")))
    }
}
