//! One error type for the whole binary, with a stable exit code per failure
//! class so scripts can branch on what went wrong.

use std::path::Path;
use synopsis_core::backend::BackendError;
use synopsis_core::dataset::DatasetError;
use synopsis_core::policy::PolicyError;
use synopsis_core::trainer::TrainerError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or inconsistent configuration (file, flags, or their merge).
    #[error("config: {0}")]
    Config(String),
    /// Filesystem trouble: unreadable inputs, unwritable outputs.
    #[error("io: {0}")]
    Io(String),
    /// A remote endpoint failed after the client exhausted its retries.
    #[error("backend: {0}")]
    Backend(String),
    /// Input data that parsed but does not hold up: schema violations,
    /// misaligned files, empty sample sets.
    #[error("validation: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {source}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match &e {
            DatasetError::InvalidConfig { .. } => CliError::Config(e.to_string()),
            DatasetError::Schema { .. } => CliError::Validation(e.to_string()),
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match &e {
            BackendError::InvalidRequest(_) => CliError::Config(e.to_string()),
            BackendError::EmptyPrompt(_) | BackendError::WrongArity { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match &e {
            PolicyError::Io(_) => CliError::Io(e.to_string()),
            PolicyError::Encoding(_) | PolicyError::CheckpointVersion(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Config(msg) => CliError::Config(msg),
            TrainerError::EmptyValidation => CliError::Validation("validation set is empty".into()),
            TrainerError::Backend(inner) => CliError::from(inner),
            TrainerError::Dataset(inner) => CliError::from(inner),
            TrainerError::Policy(inner) => CliError::from(inner),
            TrainerError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_per_class() {
        let cases = [
            (CliError::Config("x".into()), EXIT_CONFIG),
            (CliError::Io("x".into()), EXIT_IO),
            (CliError::Backend("x".into()), EXIT_BACKEND),
            (CliError::Validation("x".into()), EXIT_VALIDATION),
        ];
        let mut seen = std::collections::HashSet::new();
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code);
            assert!(seen.insert(code), "exit code {code} reused");
            assert_ne!(code, 0);
            assert_ne!(code, 1);
        }
    }

    #[test]
    fn core_errors_map_to_the_right_class() {
        let bad_key = DatasetError::InvalidConfig {
            key: "apply_prob",
            message: "probabilities must sum to one".into(),
        };
        match CliError::from(bad_key) {
            CliError::Config(msg) => assert!(msg.contains("apply_prob")),
            other => panic!("expected config error, got {other:?}"),
        }

        let transport = BackendError::Transport {
            endpoint: "http://x/v1/chat/completions".into(),
            message: "refused".into(),
        };
        assert_eq!(CliError::from(transport).exit_code(), EXIT_BACKEND);

        assert_eq!(
            CliError::from(TrainerError::EmptyValidation).exit_code(),
            EXIT_VALIDATION
        );
    }
}
