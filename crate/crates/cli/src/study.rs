//! Prompt-shape study: the same benchmark run once per instruction variant,
//! reported as a variant × task success matrix.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swarmgen_core::TaskKind;

use crate::bench::{default_workers, load_trials, prepare_resumable, run_jobs, Fingerprint, Job, TaskSummary, TrialPolicy};
use crate::generate::BackendArgs;
use crate::task::load_task;
use crate::{default_path, write_file, CliError, CliResult, Exit};

/// The seven instruction shapes, from a bare compound instruction to a
/// structured step-by-step policy description.
pub const VARIANTS: [&str; 7] = [
    "plain-compound-cohesive",
    "plain-compound",
    "plain-objective",
    "plain-policy",
    "plain-narrative",
    "structured-objective",
    "structured-policy",
];

pub const REPORT_FILE: &str = "study.toml";

#[derive(Debug, clap::Args)]
pub struct StudyArgs {
    /// Comma-separated built-in task names.
    #[arg(long, value_delimiter = ',', default_value = "coverage,encircling,shaping")]
    pub tasks: Vec<String>,
    /// Comma-separated variant names; defaults to all seven.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// Backend flag; `{task}` and `{variant}` are substituted per cell.
    #[arg(long)]
    pub backend: String,
    #[arg(long, default_value = "backends.toml")]
    pub profiles: PathBuf,
    /// Directory of `<task>/<variant>.txt` instruction files.
    #[arg(long)]
    pub variants_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

/// One cell of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub variant: String,
    pub task: String,
    pub trials: u32,
    pub successes: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub fingerprint: Fingerprint,
    pub variants: Vec<String>,
    pub tasks: Vec<String>,
    /// Variant-major, in the order of `variants` and `tasks`.
    pub cells: Vec<StudyCell>,
}

impl StudyReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("study report serializes")
    }

    pub fn cell(&self, variant: &str, task: &str) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.variant == variant && c.task == task)
    }

    pub fn render_matrix(&self) -> String {
        let mut s = format!("{:<26}", "variant");
        for t in &self.tasks {
            s += &format!(" {t:>12}");
        }
        s.push('\n');
        for v in &self.variants {
            s += &format!("{v:<26}");
            for t in &self.tasks {
                let c = self.cell(v, t).expect("every cell is present");
                s += &format!(" {:>12}", format!("{}/{}", c.successes, c.trials));
            }
            s.push('\n');
        }
        s
    }
}

/// Reads the instruction for `variant` on `task`.
pub fn variant_instruction(dir: &Path, task: &str, variant: &str) -> Result<String, CliError> {
    let path = dir.join(task).join(format!("{variant}.txt"));
    std::fs::read_to_string(&path)
        .map(|t| t.trim().to_string())
        .map_err(|e| CliError::config(format!("prompt variant {variant} for {task}: {}: {e}", path.display())))
}

pub fn cmd_prompt_study(args: &StudyArgs, out: &mut dyn Write) -> CliResult {
    if args.trials == 0 {
        return Err(CliError::config("trials must be at least 1"));
    }
    let variants: Vec<String> = if args.variants.is_empty() {
        VARIANTS.iter().map(|v| v.to_string()).collect()
    } else {
        args.variants.clone()
    };
    if let Some(v) = variants.iter().find(|v| !VARIANTS.contains(&v.as_str())) {
        return Err(CliError::config(format!("unknown prompt variant {v:?}")));
    }
    for t in &args.tasks {
        t.parse::<TaskKind>()
            .map_err(|_| CliError::config(format!("unknown task {t:?}")))?;
    }
    let dir = args.variants_dir.clone().unwrap_or_else(|| default_path("prompts/variants"));
    let mut jobs = Vec::new();
    let mut kinds = BTreeMap::new();
    for v in &variants {
        for t in &args.tasks {
            let spec = load_task(t)?;
            let instruction = variant_instruction(&dir, t, v)?;
            let label = format!("{v}/{t}");
            kinds.insert(label.clone(), spec.kind);
            jobs.push(Job {
                label,
                spec,
                policy: TrialPolicy::Generated {
                    backend: BackendArgs {
                        backend: args.backend.replace("{task}", t).replace("{variant}", v),
                        profiles: args.profiles.clone(),
                    },
                    instruction,
                },
            });
        }
    }
    let seeds: Vec<u64> = (0..args.trials as u64).map(|i| args.seed_base + i).collect();
    let identity = format!(
        "variants = {variants:?}\ntasks = {:?}\nseeds = {seeds:?}\nbackend = {:?}\n",
        args.tasks, args.backend
    );
    prepare_resumable(&args.out, &identity, args.force)?;
    run_jobs(&jobs, &seeds, &args.out, args.workers.unwrap_or_else(default_workers))?;
    let labels: Vec<String> = jobs.iter().map(|j| j.label.clone()).collect();
    let trials = load_trials(&args.out, &labels, &seeds)?;
    let cells = jobs
        .iter()
        .map(|j| {
            let s = TaskSummary::from_reports(&j.label, kinds[&j.label], &trials[&j.label]);
            let (variant, task) = j.label.split_once('/').expect("label is variant/task");
            StudyCell {
                variant: variant.to_string(),
                task: task.to_string(),
                trials: s.trials,
                successes: s.successes,
                rate: s.rate,
            }
        })
        .collect();
    let hash = hex::encode(Sha256::digest(identity.as_bytes()));
    let report = StudyReport {
        fingerprint: Fingerprint::new("pipeline", &args.backend, hash),
        variants,
        tasks: args.tasks.clone(),
        cells,
    };
    write_file(&args.out.join(REPORT_FILE), report.to_toml_string())?;
    out.write_all(report.render_matrix().as_bytes())
        .map_err(|e| CliError::infra(e.to_string()))?;
    Ok(Exit::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_has_text_for_the_default_tasks() {
        let dir = default_path("prompts/variants");
        for task in ["coverage", "encircling", "shaping"] {
            let mut seen = std::collections::BTreeSet::new();
            for v in VARIANTS {
                let text = variant_instruction(&dir, task, v).unwrap();
                assert!(!text.is_empty(), "{task}/{v}");
                assert!(seen.insert(text), "{task}/{v} duplicates another variant");
            }
        }
    }

    #[test]
    fn missing_variant_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let e = variant_instruction(dir.path(), "encircling", "plain-policy").unwrap_err();
        assert_eq!(e.exit, Exit::Config);
        assert!(e.message.contains("plain-policy"), "{}", e.message);
    }
}
