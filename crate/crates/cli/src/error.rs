//! Exit-code classification.

use std::fmt;

/// A command failure and the exit code it maps to: 2 for bad usage or
/// configuration, 1 for anything that goes wrong while running.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, err) = match self {
            Self::Usage(e) => ("usage", e),
            Self::Runtime(e) => ("error", e),
        };
        write!(f, "{kind}: {err:#}")
    }
}

/// Configuration and parameter errors raised by the core library count as
/// usage errors wherever they surface.
impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        use tofspec_core::Error as E;
        match err.chain().find_map(|e| e.downcast_ref::<E>()) {
            Some(E::Config(_) | E::InvalidParameter(_)) => Self::Usage(err),
            _ => Self::Runtime(err),
        }
    }
}

impl From<tofspec_core::Error> for Failure {
    fn from(err: tofspec_core::Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Self::Runtime(err.into())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait UsageExt<T> {
    /// Mark an error as a usage or configuration problem.
    fn usage(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> UsageExt<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

#[macro_export]
macro_rules! usage_bail {
    ($($arg:tt)*) => {
        return Err($crate::error::Failure::Usage(anyhow::anyhow!($($arg)*)))
    };
}
