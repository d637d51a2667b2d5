//! Exit-code contract: 2 config, 3 I/O, 4 numerical abort, 5 validation.

use std::fmt;

#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: "config", code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: "io", code: 3, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: "numerical", code: 4, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: "validation", code: 5, message: message.into() }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "code": self.code, "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<amlp::Error> for Failure {
    fn from(e: amlp::Error) -> Self {
        use amlp::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => Failure::config(msg),
            E::Io(_) | E::Json(_) | E::Corrupt(_) | E::Version { .. } => Failure::io(msg),
            E::Numerical(_) => Failure::numerical(msg),
            _ => Failure::validation(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}
