//! Session plumbing: configuration, snapshot-backed load/save, errors.

use std::path::{Path, PathBuf};

use mom_core::abstraction::AbstractionError;
use mom_core::attention::AttentionError;
use mom_core::consolidation::ConsolidationError;
use mom_core::kernel::KernelError;
use mom_core::method::MethodError;
use mom_core::planner::PlanError;
use mom_core::snapshot::{self, Session, SnapshotError};
use mom_core::story::StoryError;

use crate::records::OutputMode;

/// Per-invocation configuration; all defaults are documented in `--help`.
pub struct SessionConfig {
    /// Seed for randomized operations. None of the current subcommands draw
    /// randomness, but the seed is fixed per invocation by contract.
    #[allow(dead_code)]
    pub seed: u64,
    /// Consolidation step override; `None` keeps the session's stored value.
    pub alpha: Option<f64>,
    /// Working-memory capacity used by focus subcommands.
    pub wm_capacity: usize,
    /// Snapshot path: loaded if present, saved back by mutating commands.
    pub snapshot: Option<PathBuf>,
    pub output: OutputMode,
}

/// A failed command: domain errors exit 1, usage errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Domain(String),
    Usage(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Usage(m) => m,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

macro_rules! domain_from {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )+};
}

domain_from!(
    KernelError,
    MethodError,
    StoryError,
    AbstractionError,
    ConsolidationError,
    PlanError,
    AttentionError,
    SnapshotError
);

/// Read a file, naming it in the error.
pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Domain(format!("Io: {}: {e}", path.display())))
}

/// Load the session from the snapshot path when one exists, else start empty.
pub fn load_session(cfg: &SessionConfig) -> Result<Session, CliError> {
    let mut session = match &cfg.snapshot {
        Some(p) if p.exists() => snapshot::load_from(p)?,
        _ => Session::new(),
    };
    if let Some(alpha) = cfg.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Usage(format!("alpha must be in (0, 1), got {alpha}")));
        }
        session.graph.config.alpha = alpha;
    }
    Ok(session)
}

/// Persist the session when a snapshot path is configured.
pub fn save_session(cfg: &SessionConfig, session: &Session) -> Result<(), CliError> {
    if let Some(p) = &cfg.snapshot {
        snapshot::save_to(session, p)?;
    }
    Ok(())
}
