//! Process exit codes. A [`Stage`] attached as context decides the code.

use std::fmt;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const TRANSPORT: i32 = 3;
pub const ANALYSIS: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Transport,
    Analysis,
}

impl Stage {
    pub fn code(self) -> i32 {
        match self {
            Stage::Config => CONFIG,
            Stage::Transport => TRANSPORT,
            Stage::Analysis => ANALYSIS,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config error",
            Stage::Transport => "transport error",
            Stage::Analysis => "analysis error",
        })
    }
}

/// Exit code of a failed run. Errors without a stage are configuration
/// errors, since argument and file problems are the only untagged ones.
pub fn code_of(err: &anyhow::Error) -> i32 {
    err.downcast_ref::<Stage>().map_or(CONFIG, |s| s.code())
}
