use robust_lfd::LfdError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The scenario could not be read, parsed or validated.
    #[error("{message}")]
    Config { path: Option<String>, message: String },
    /// The classes admit no solution or cannot be separated.
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Convergence(String),
    #[error("{0}")]
    Io(String),
    /// The solution was produced but a verification check failed.
    #[error("verification failed for {0}")]
    VerificationFailed(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Infeasible(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::VerificationFailed(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Config { .. } => "config",
            CliError::Infeasible(_) => "infeasible",
            CliError::Convergence(_) => "convergence",
            CliError::VerificationFailed(_) => "verification",
        }
    }

    /// The JSON document printed on standard error.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            exit_code: i32,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<&'a str>,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            error: Body<'a>,
        }
        let path = match self {
            CliError::Config { path, .. } => path.as_deref(),
            _ => None,
        };
        let doc = Doc {
            error: Body {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message: self.to_string(),
                path,
            },
        };
        serde_json::to_string(&doc).expect("error document serializes")
    }
}

impl From<LfdError> for CliError {
    fn from(e: LfdError) -> Self {
        match e {
            LfdError::Infeasible { .. } | LfdError::ClassOverlap(_) => CliError::Infeasible(e.to_string()),
            LfdError::Convergence { .. } => CliError::Convergence(e.to_string()),
            _ => CliError::Config {
                path: None,
                message: e.to_string(),
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
