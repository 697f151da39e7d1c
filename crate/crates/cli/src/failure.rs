use std::fmt;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// Prefixes the message with the config key it concerns.
    pub fn at(mut self, key: &str) -> Self {
        self.message = format!("{key}: {}", self.message);
        self
    }
}

impl From<latent_geometry::Error> for Failure {
    fn from(e: latent_geometry::Error) -> Self {
        Failure {
            code: if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
