//! `mom`: a command-line session over the operational-memory core.
//!
//! One session per process: the graph is loaded from the snapshot path (if
//! any), the subcommand runs against it, and mutating subcommands save the
//! session back. Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod records;
mod session;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Scorer;
use records::OutputMode;
use session::SessionConfig;

#[derive(Parser)]
#[command(
    name = "mom",
    version,
    about = "Operational memory of models: episodes, abstraction, consolidation, planning, attention"
)]
struct Cli {
    /// Seed for randomized operations; fixed per invocation
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Emit one JSON record per line instead of readable text
    #[arg(long, global = true)]
    json: bool,

    /// Session snapshot path: loaded if present, saved back by mutating
    /// commands
    #[arg(long, global = true, env = "MOM_SNAPSHOT")]
    snapshot: Option<PathBuf>,

    /// Consolidation step per touch, in (0, 1); overrides the session value
    #[arg(long, global = true)]
    alpha: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse story files into the session
    Ingest {
        /// Story files, each holding one or more episodes
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Replay an episode and print the state at a step
    Replay {
        /// Episode id from an ingested story
        episode: String,
        /// State index to show; defaults to the final state
        #[arg(long)]
        at: Option<usize>,
    },
    /// Show an element: statistics, attributes, ranked actions
    Query {
        /// Element name
        name: String,
        /// Rank admissible actions lowest-scored first
        #[arg(long)]
        creative: bool,
    },
    /// Form a class over two or more named instances
    Abstract {
        /// Instance names; all must share kind and level
        #[arg(required = true, num_args = 2..)]
        members: Vec<String>,
        /// Name for the new class
        #[arg(long = "as")]
        class_name: String,
    },
    /// Induce event classes from episodes and collapse model versions
    Consolidate {
        /// Directory of .story files to ingest first (in name order)
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Occurrences needed for a pattern to become a template
        #[arg(long, default_value_t = 2)]
        min_support: usize,
        /// Evidence ratio at which one version kills its rivals
        #[arg(long, default_value_t = 2.0)]
        dominance: f64,
    },
    /// Plan a route through a space file
    Plan {
        /// Space file: `space grid W H` or `space graph`
        #[arg(long)]
        space: PathBuf,
        /// Hierarchy depth; 1 searches flat, each extra level coarsens 2x2
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// Print one `level state action` line per search expansion
        #[arg(long)]
        trace: bool,
        /// Start state, overriding the file
        #[arg(long)]
        start: Option<String>,
        /// Goal state, overriding the file
        #[arg(long)]
        goal: Option<String>,
    },
    /// Pick the best start for a goal, then plan from it
    Design {
        /// Space file: `space grid W H` or `space graph`
        #[arg(long)]
        space: PathBuf,
        /// Hierarchy depth; 1 searches flat, each extra level coarsens 2x2
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// What makes a start good
        #[arg(long, value_enum, default_value_t = Scorer::Far)]
        scorer: Scorer,
        /// Goal state, overriding the file
        #[arg(long)]
        goal: Option<String>,
    },
    /// Build a focus set from prioritized elements
    Attend {
        /// Working-memory capacity, 5..=9
        #[arg(long, default_value_t = 7)]
        wm: usize,
        /// Blend weight: priority = w*internal + (1-w)*external
        #[arg(long, default_value_t = 0.5)]
        w: f64,
        /// Items as NAME=INTERNAL,EXTERNAL
        #[arg(required = true)]
        items: Vec<String>,
    },
    /// Drive focus and filtering line by line from a script
    Step {
        /// Script path; reads stdin when omitted
        #[arg(long)]
        script: Option<PathBuf>,
        /// Working-memory capacity, 5..=9
        #[arg(long, default_value_t = 7)]
        wm: usize,
        /// Blend weight: priority = w*internal + (1-w)*external
        #[arg(long, default_value_t = 0.5)]
        w: f64,
    },
    /// Save or load a session snapshot
    Snapshot {
        #[command(subcommand)]
        action: SnapshotCmd,
    },
}

#[derive(Subcommand)]
enum SnapshotCmd {
    /// Write the session to a file
    Save {
        /// Destination path
        to: PathBuf,
    },
    /// Summarize a snapshot file and import it into the session path
    Load {
        /// Source path
        from: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let wm_capacity = match &cli.command {
        Command::Attend { wm, .. } | Command::Step { wm, .. } => *wm,
        _ => 7,
    };
    let cfg = SessionConfig {
        seed: cli.seed,
        alpha: cli.alpha,
        wm_capacity,
        snapshot: cli.snapshot,
        output: if cli.json { OutputMode::Json } else { OutputMode::Human },
    };
    let result = match cli.command {
        Command::Ingest { files } => commands::ingest(&cfg, &files),
        Command::Replay { episode, at } => commands::replay(&cfg, &episode, at),
        Command::Query { name, creative } => commands::query(&cfg, &name, creative),
        Command::Abstract { members, class_name } => {
            commands::abstract_cmd(&cfg, &members, &class_name)
        }
        Command::Consolidate { episodes, min_support, dominance } => {
            commands::consolidate(&cfg, episodes.as_deref(), min_support, dominance)
        }
        Command::Plan { space, levels, trace, start, goal } => {
            commands::plan(&cfg, &space, levels, trace, start.as_deref(), goal.as_deref())
        }
        Command::Design { space, levels, scorer, goal } => {
            commands::design_cmd(&cfg, &space, levels, scorer, goal.as_deref())
        }
        Command::Attend { w, items, .. } => commands::attend(&cfg, w, &items),
        Command::Step { script, w, .. } => commands::step(&cfg, script.as_deref(), w),
        Command::Snapshot { action } => match action {
            SnapshotCmd::Save { to } => commands::snapshot_save(&cfg, &to),
            SnapshotCmd::Load { from } => commands::snapshot_load(&cfg, &from),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
