//! The `swarmgen` command line: generate policies from instructions, run and
//! evaluate trials, benchmark success rates, study prompt shapes, refine a
//! policy interactively and render trial logs.
//!
//! Every command maps its outcome onto one exit-code contract, see [`Exit`].

pub mod bench;
pub mod evaluate;
pub mod exit;
pub mod generate;
pub mod interactive;
pub mod render;
pub mod run;
pub mod study;
pub mod task;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use exit::{CliError, CliResult, Exit};

/// Where a command reads and writes; tests substitute buffers.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
}

#[derive(Debug, Parser)]
#[command(name = "swarmgen", version, about = "Instruction-to-policy generation and evaluation for robot swarms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn an instruction into a policy bundle.
    Generate(generate::GenerateArgs),
    /// Run one trial of a bundle or expert and evaluate it.
    Run(run::RunArgs),
    /// Score a recorded trial log.
    Evaluate(evaluate::EvaluateArgs),
    /// Run a benchmark plan and report success rates.
    Bench(bench::BenchArgs),
    /// Generate, run and refine a policy from typed feedback.
    Interactive(interactive::InteractiveArgs),
    /// Benchmark every prompt variant on every task.
    PromptStudy(study::StudyArgs),
    /// Draw a trial log as image frames.
    Render(render::RenderArgs),
    /// The per-robot policy runtime (same as `swarmgen-node`).
    #[command(disable_help_flag = true)]
    Node {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<OsString>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn main_with<I, T>(args: I, io: Io) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.code() } else { Exit::Ok.code() };
        }
    };
    match dispatch(cli.command, io) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit.code()
        }
    }
}

pub fn dispatch(command: Command, io: Io) -> CliResult {
    match command {
        Command::Generate(a) => generate::cmd_generate(&a, io.out),
        Command::Run(a) => run::cmd_run(&a, io.out),
        Command::Evaluate(a) => evaluate::cmd_evaluate(&a, io.out),
        Command::Bench(a) => bench::cmd_bench(&a, io.out),
        Command::Interactive(a) => interactive::cmd_interactive(&a, io),
        Command::PromptStudy(a) => study::cmd_prompt_study(&a, io.out),
        Command::Render(a) => render::cmd_render(&a, io.out),
        Command::Node { args } => {
            let argv = std::iter::once(OsString::from("swarmgen node")).chain(args);
            Ok(Exit::from_code(swarmgen_deploy::node_cli::run(argv)))
        }
    }
}

/// Makes `dir` ready for fresh output: refuses a non-empty directory unless
/// `force`, in which case its contents are removed.
pub fn prepare_output(dir: &Path, force: bool) -> Result<(), CliError> {
    let populated = std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if populated {
        if !force {
            return Err(CliError::config(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// The repository root when running from a checkout, for default paths such
/// as `prompts/variants`.
pub fn default_path(rel: &str) -> PathBuf {
    let here = PathBuf::from(rel);
    if here.exists() {
        return here;
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}
