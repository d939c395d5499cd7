//! Process exit-code policy: 0 success, 2 config/validation, 3 numerical
//! convergence, 4 fit failure on a required (non-sweep) point.

use spinwire_core::Error as CoreError;

#[derive(Debug)]
pub struct RunError {
    pub code: i32,
    pub msg: String,
}

impl RunError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    /// Maps a core error arising at a required point of the run.
    pub fn from_core(err: CoreError) -> Self {
        let code = match err {
            CoreError::NoConvergence { .. } | CoreError::StepNotConverged { .. } => 3,
            CoreError::NoPeak { .. } | CoreError::DegenerateFit { .. } => 4,
            _ => 2,
        };
        Self { code, msg: format!("{err}") }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl std::error::Error for RunError {}

impl From<CoreError> for RunError {
    fn from(err: CoreError) -> Self {
        Self::from_core(err)
    }
}
