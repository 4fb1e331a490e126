use std::io::ErrorKind;
use std::process::ExitCode;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Other = 1,
    MissingInput = 3,
    Schema = 4,
    Config = 5,
    Transport = 6,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl From<promptpress::Error> for CliError {
    fn from(err: promptpress::Error) -> Self {
        use promptpress::Error as E;
        let kind = match &err {
            E::Io { source, .. } if source.kind() == ErrorKind::NotFound => Kind::MissingInput,
            E::Io { .. } => Kind::Other,
            E::Record { .. } | E::Document { .. } | E::LengthMismatch { .. } | E::EmptyInput(_) => Kind::Schema,
            E::InvalidArgument(_) => Kind::Config,
            E::Transport { .. } => Kind::Transport,
            E::NonFiniteLoss { .. } => Kind::Other,
        };
        CliError::new(kind, err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a document id to an error, keeping its category.
pub fn in_doc(doc_id: &str) -> impl Fn(promptpress::Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        if !err.message.contains(doc_id) {
            err.message = format!("document {doc_id}: {}", err.message);
        }
        err
    }
}
