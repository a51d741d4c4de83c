use hedonic_core::Error;
use serde::Serialize;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_NETWORK: i32 = 4;

/// A failed command: exit code plus the one-line reason printed on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: i32,
    #[serde(rename = "error")]
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "usage", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "config", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, "data", message)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("failure serializes")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) | Error::Argument(_) => (EXIT_USAGE, "config"),
            Error::Training { .. } | Error::Numerical(_) | Error::State(_) => {
                (EXIT_TRAINING, "training")
            }
            e if e.is_network() => (EXIT_NETWORK, "network"),
            _ => (EXIT_DATA, "data"),
        };
        Failure::new(code, kind, e.to_string())
    }
}
