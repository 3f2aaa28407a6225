use std::fmt;
use std::path::Path;

use swarmgen_agent::gateway::GatewayError;
use swarmgen_agent::pipeline::PipelineError;

/// Process exit codes, the same for every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok,
    /// The policy ran but missed a success criterion.
    TaskFailed,
    /// Bad arguments, files, credentials or preconditions.
    Config,
    /// The model, a node, the simulator or the filesystem failed.
    Infrastructure,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Ok => 0,
            Exit::TaskFailed => 1,
            Exit::Config => 2,
            Exit::Infrastructure => 3,
        }
    }

    pub fn from_code(code: i32) -> Self {
        match code {
            0 => Exit::Ok,
            1 => Exit::TaskFailed,
            2 => Exit::Config,
            _ => Exit::Infrastructure,
        }
    }

    pub fn from_success(success: bool) -> Self {
        if success {
            Exit::Ok
        } else {
            Exit::TaskFailed
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

pub type CliResult = Result<Exit, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Config,
            message: message.into(),
        }
    }

    pub fn infra(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Infrastructure,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::infra(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Auth(_) | GatewayError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::infra(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let exit = match &e {
            PipelineError::Gateway { error, .. } => CliError::from(error.clone()).exit,
            PipelineError::Precondition(_) | PipelineError::Prompt(_) => Exit::Config,
            _ => Exit::Infrastructure,
        };
        CliError {
            exit,
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for e in [Exit::Ok, Exit::TaskFailed, Exit::Config, Exit::Infrastructure] {
            assert_eq!(Exit::from_code(e.code()), e);
        }
        assert_eq!(Exit::from_code(-9), Exit::Infrastructure);
    }

    #[test]
    fn auth_failures_are_configuration_errors() {
        let e = PipelineError::Gateway {
            action: "extract-constraints".into(),
            attempts: 1,
            error: GatewayError::Auth("SWARMGEN_API_KEY is not set".into()),
        };
        assert_eq!(CliError::from(e).exit, Exit::Config);
        let e = PipelineError::Gateway {
            action: "extract-constraints".into(),
            attempts: 3,
            error: GatewayError::Timeout,
        };
        assert_eq!(CliError::from(e).exit, Exit::Infrastructure);
    }
}
