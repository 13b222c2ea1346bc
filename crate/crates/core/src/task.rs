use std::fmt;

use serde::{Deserialize, Serialize};

/// Task identifier. `TaskId(1)` is conventionally the autoregressive
/// sequence task every later task is linked to by user id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u16);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Next-item prediction over the user's own sequence.
    Autoregressive,
    /// Top-N recommendation trained with a pairwise loss.
    Ranking,
    /// Profile prediction trained with cross-entropy.
    Classification,
}

impl TaskKind {
    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Autoregressive | TaskKind::Ranking => "mrr@5",
            TaskKind::Classification => "accuracy",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Autoregressive => "autoregressive",
            TaskKind::Ranking => "ranking",
            TaskKind::Classification => "classification",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "autoregressive" => Ok(TaskKind::Autoregressive),
            "ranking" => Ok(TaskKind::Ranking),
            "classification" => Ok(TaskKind::Classification),
            other => Err(crate::Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}
