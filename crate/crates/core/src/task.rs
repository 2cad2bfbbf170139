use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three fusion problems the crate handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Infrared and visible image fusion.
    Ivf,
    /// Multi-exposure fusion.
    Mef,
    /// Multi-modal (low-resolution multispectral with a high-resolution
    /// guide) fusion.
    Mmf,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ivf => "ivf",
            Task::Mef => "mef",
            Task::Mmf => "mmf",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ivf" => Ok(Task::Ivf),
            "mef" => Ok(Task::Mef),
            "mmf" => Ok(Task::Mmf),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected ivf, mef or mmf)"
            ))),
        }
    }
}
