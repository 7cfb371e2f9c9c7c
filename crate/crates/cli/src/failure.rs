use std::fmt;

/// A failed command with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn acceptance(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_ACCEPTANCE,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<optosqueeze::Error> for Failure {
    fn from(e: optosqueeze::Error) -> Self {
        use optosqueeze::Error as E;
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else {
            match e {
                E::InvalidParameter { .. } | E::Format(_) | E::Json(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            }
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_OTHER,
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let bad = optosqueeze::Error::Format("x".into());
        assert_eq!(Failure::from(bad).code, EXIT_CONFIG);
        let num = optosqueeze::Error::Nonphysical { nu: 0.1 };
        assert_eq!(Failure::from(num).code, EXIT_NUMERIC);
        let io = optosqueeze::Error::Io(std::io::Error::other("disk"));
        assert_eq!(Failure::from(io).code, EXIT_OTHER);
    }
}
