//! `--task` arguments: a built-in task name such as `encircling`, or the
//! path of a task file.

use std::path::Path;
use std::str::FromStr;

use swarmgen_core::{TaskKind, TaskSpec};

use crate::CliError;

pub fn load_task(arg: &str) -> Result<TaskSpec, CliError> {
    if let Ok(kind) = TaskKind::from_str(arg) {
        if !Path::new(arg).exists() {
            return Ok(TaskSpec::default_for(kind));
        }
    }
    TaskSpec::load(arg).map_err(|e| CliError::config(format!("task {arg}: {e}")))
}

/// The spec to use for a policy of kind `kind`: `--task` if given (and of
/// the same kind), else the built-in default.
pub fn task_for(kind: TaskKind, arg: Option<&str>) -> Result<TaskSpec, CliError> {
    let spec = match arg {
        Some(a) => load_task(a)?,
        None => TaskSpec::default_for(kind),
    };
    if spec.kind != kind {
        return Err(CliError::config(format!(
            "policy is for {} but the task is {}",
            kind.as_str(),
            spec.kind.as_str()
        )));
    }
    Ok(spec)
}
