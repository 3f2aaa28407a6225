use std::io::Write;
use std::path::PathBuf;

use swarmgen_core::metrics::evaluate;
use swarmgen_core::trial::TrialLog;

use crate::task::task_for;
use crate::{write_file, CliError, CliResult, Exit};

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Trial log written by `run`.
    #[arg(long)]
    pub log: PathBuf,
    /// Task to score against; defaults to the spec recorded in the log.
    #[arg(long)]
    pub task: Option<String>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Prints (or writes) the metric report of a recorded trial. Exit 0 when
/// every criterion holds, 1 otherwise.
pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let log = TrialLog::load(&args.log).map_err(|e| CliError::config(format!("{}: {e}", args.log.display())))?;
    let spec = match (&args.task, &log.spec) {
        (None, Some(spec)) => spec.clone(),
        (task, _) => task_for(log.task, task.as_deref())?,
    };
    if spec.kind != log.task {
        return Err(CliError::config(format!(
            "log is a {} trial but the task is {}",
            log.task.as_str(),
            spec.kind.as_str()
        )));
    }
    let report = evaluate(&log, &spec).map_err(|e| CliError::config(format!("evaluate: {e}")))?;
    let text = report.to_toml_string();
    match &args.out {
        Some(path) => write_file(path, text)?,
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::infra(e.to_string()))?,
    }
    Ok(Exit::from_success(report.success))
}
