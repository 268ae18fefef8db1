use std::io;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frame {frame} has {found} atoms, expected {expected}")]
    InconsistentAtomCount {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("simulation blew up: {0}")]
    BlowUp(String),
    #[error("r_max {r_max} exceeds half the smallest box length ({limit})")]
    RMaxTooLarge { r_max: f64, limit: f64 },
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("frame has no atoms")]
    EmptyFrame,
    #[error("q must be positive, got {0}")]
    NonpositiveQ(f64),
    #[error("need at least 2 stress records, got {0}")]
    TooFewRecords(usize),
    #[error("cutoff must be positive and finite, got {0}")]
    InvalidCutoff(f64),
    #[error("{0}")]
    Io(String),
}

impl ToolError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        ToolError::Parse {
            line,
            message: message.into(),
        }
    }

    /// 1 for failures while running, 2 for bad input or arguments.
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::BlowUp(_) | ToolError::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<io::Error> for ToolError {
    fn from(e: io::Error) -> Self {
        ToolError::Io(e.to_string())
    }
}
