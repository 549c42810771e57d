use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A semantic aspect with its own embedding space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "act")]
    Activity,
    #[serde(rename = "pers")]
    Person,
    #[serde(rename = "attr")]
    Attribute,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Activity, Task::Person, Task::Attribute];

    pub fn name(self) -> &'static str {
        match self {
            Task::Activity => "act",
            Task::Person => "pers",
            Task::Attribute => "attr",
        }
    }

    pub fn index(self) -> usize {
        self as usize
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
        match s {
            "act" | "activity" => Ok(Task::Activity),
            "pers" | "person" => Ok(Task::Person),
            "attr" | "attribute" => Ok(Task::Attribute),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}
