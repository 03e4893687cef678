//! Argument parsing and process-level plumbing.
//!
//! Exit codes: 0 success, 2 input error, 3 runtime capacity or stall. Every
//! failure prints a single-line JSON object `{"kind", "message"}` on stderr
//! so harnesses can branch on the stable kind taxonomy.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use semloft::error::Error;

use crate::commands::{self, DetectArgs, ExtractArgs, RenderArgs, ScoreArgs, SynthArgs};

#[derive(Debug, Parser)]
#[command(
    name = "semloft",
    version,
    about = "Semantic world models from occupancy grid maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Extract a world model from a map by posterior search.
    Extract(ExtractArgs),
    /// Render a ground-truth world to a synthetic noisy map.
    Synth(SynthArgs),
    /// Score a world against a map.
    Score(ScoreArgs),
    /// Dump wall, door, and unit detector candidates.
    Detect(DetectArgs),
    /// Draw a world overlay on a map.
    Render(RenderArgs),
}

pub fn dispatch(cmd: &Cmd) -> semloft::Result<()> {
    match cmd {
        Cmd::Extract(a) => commands::cmd_extract(a),
        Cmd::Synth(a) => commands::cmd_synth(a),
        Cmd::Score(a) => commands::cmd_score(a),
        Cmd::Detect(a) => commands::cmd_detect(a),
        Cmd::Render(a) => commands::cmd_render(a),
    }
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", error_json("config", e.to_string().trim_end()));
            return 2;
        }
    };
    match dispatch(&cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        "capacity" | "stall" => 3,
        _ => 2,
    }
}

pub fn error_json(kind: &str, message: &str) -> String {
    serde_json::to_string(&serde_json::json!({"kind": kind, "message": message}))
        .expect("error JSON serializes")
}
