use serde::Serialize;

/// Exit status 1: bad config, flags or inputs. Exit status 2: a failure
/// while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// One JSON object for stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            status: &'static str,
            kind: &'static str,
            exit_code: i32,
            message: &'a str,
        }
        let (kind, message) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        serde_json::to_string(&Line {
            status: "error",
            kind,
            exit_code: self.exit_code(),
            message,
        })
        .expect("plain struct serializes")
    }
}

impl From<dser_core::Error> for CliError {
    fn from(e: dser_core::Error) -> Self {
        use dser_core::Error as E;
        match e {
            E::Invalid(_)
            | E::MissingLabelClass(_)
            | E::EmptyInput(_)
            | E::FileNotFound(_)
            | E::VersionMismatch { .. }
            | E::AudioTooShort { .. }
            | E::TooShort(_)
            | E::BadHeader(_)
            | E::UnsupportedEncoding(_)
            | E::SampleRate { .. }
            | E::EmptySequence
            | E::NonMonotoneTime { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<dser_annotate::Error> for CliError {
    fn from(e: dser_annotate::Error) -> Self {
        use dser_annotate::Error as E;
        match e {
            E::Core(inner) => inner.into(),
            E::BadManifest { .. } | E::CorruptLog { .. } | E::Invalid(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
