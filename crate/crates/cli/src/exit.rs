//! Failure categories and their process exit codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCategory {
    Internal = 1,
    Usage = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Training = 6,
}

impl ExitCategory {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// Category of the first recognizable cause in the error chain.
    pub fn of(err: &anyhow::Error) -> Self {
        for cause in err.chain() {
            if let Some(e) = cause.downcast_ref::<hubspy::Error>() {
                return match e {
                    hubspy::Error::Config(_) => ExitCategory::Config,
                    hubspy::Error::Divergence { .. } => ExitCategory::Training,
                    hubspy::Error::Io(_) => ExitCategory::Io,
                    hubspy::Error::Domain(_) | hubspy::Error::Parse { .. } => ExitCategory::Data,
                };
            }
            if cause.is::<toml::de::Error>() {
                return ExitCategory::Config;
            }
            if cause.is::<std::io::Error>() {
                return ExitCategory::Io;
            }
            if cause.is::<serde_json::Error>() {
                return ExitCategory::Data;
            }
        }
        ExitCategory::Internal
    }
}

impl fmt::Display for ExitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExitCategory::Internal => "internal",
            ExitCategory::Usage => "usage",
            ExitCategory::Config => "config",
            ExitCategory::Data => "data",
            ExitCategory::Io => "io",
            ExitCategory::Training => "training",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn categories_follow_the_cause_chain() {
        let e = anyhow::Error::from(hubspy::Error::Divergence { epoch: 2, loss: f64::NAN }).context("training");
        assert_eq!(ExitCategory::of(&e), ExitCategory::Training);
        let io: Result<(), _> = Err(std::io::Error::other("disk"));
        let e = io.context("writing").unwrap_err();
        assert_eq!(ExitCategory::of(&e), ExitCategory::Io);
        let e = crate::ExperimentConfig::from_toml("scenario = 3").unwrap_err();
        assert_eq!(ExitCategory::of(&e), ExitCategory::Config);
        assert_eq!(ExitCategory::of(&anyhow::anyhow!("plain")), ExitCategory::Internal);
    }
}
