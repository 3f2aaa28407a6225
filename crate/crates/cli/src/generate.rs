use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use swarmgen_agent::feedback::{FeedbackItem, FeedbackSource, SimulationCritic};
use swarmgen_agent::gateway::{BackendConfig, Gateway};
use swarmgen_agent::pipeline::{run_pipeline, Env, PipelineContext, PipelineOutput};
use swarmgen_agent::prompt::PromptLibrary;
use swarmgen_agent::provenance::Provenance;
use swarmgen_core::bundle::{PolicyBundle, SyntaxChecker};
use swarmgen_core::TaskSpec;

use crate::task::load_task;
use crate::{prepare_output, write_file, CliError, CliResult, Exit};

pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// `replay:<script.json>` or `remote:<profile>`.
    #[arg(long)]
    pub backend: String,
    /// Remote backend profiles.
    #[arg(long, default_value = "backends.toml")]
    pub profiles: PathBuf,
}

impl BackendArgs {
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let config = BackendConfig::from_flag(&self.backend, &self.profiles)?;
        Ok(Gateway::from_config(&config)?)
    }
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    /// Built-in task name or task file.
    #[arg(long)]
    pub task: String,
    /// Instruction text; defaults to the task's own.
    #[arg(long)]
    pub instruction: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Bundle directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Feedback item files applied in order after generation.
    #[arg(long)]
    pub feedback: Vec<PathBuf>,
    /// Judge the bundle on a simulated trial with this seed and regenerate
    /// from the verdict.
    #[arg(long, conflicts_with = "feedback")]
    pub critic_seed: Option<u64>,
    /// Save every exchange as a replay script.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

/// Runs the whole pipeline for `instruction` on `spec`.
pub fn generate_bundle(
    spec: &TaskSpec,
    instruction: &str,
    gateway: &Gateway,
    provenance: &Provenance,
    feedback: &mut dyn FeedbackSource,
) -> Result<PipelineOutput, CliError> {
    let prompts = PromptLibrary::builtin();
    let env = Env::new(gateway, &prompts, provenance, spec);
    Ok(run_pipeline(&env, &SyntaxChecker, feedback, PipelineContext::new(instruction))?)
}

pub fn load_feedback(path: &Path) -> Result<FeedbackItem, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Writes the bundle files and a JSON summary of constraints and skills.
pub fn export(output: &PipelineOutput, dir: &Path) -> Result<(), CliError> {
    output
        .bundle()
        .write_to(dir)
        .map_err(|e| CliError::infra(e.to_string()))?;
    let skills: Vec<_> = output.graph.skills().cloned().collect();
    let summary = serde_json::json!({
        "constraints": output.pool,
        "skills": skills,
        "layers": output.graph.layers(),
        "diagnostics": output.diagnostics,
        "feedback": output.feedback.iter().map(|f| serde_json::json!({
            "item": f.item,
            "implicated": f.implicated,
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_file(&dir.join(SUMMARY_FILE), text)
}

/// Constraint and skill tables.
pub fn print_summary(output: &PipelineOutput, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "constraints ({})", output.pool.len())?;
    for c in output.pool.iter() {
        writeln!(out, "  {:<4} {:<24} {}", c.id, c.name, c.description)?;
    }
    writeln!(out, "skills ({})", output.graph.len())?;
    writeln!(out, "  {:<6} {:<7} {:<28} constraints", "layer", "scope", "name")?;
    for (i, layer) in output.graph.layers().iter().enumerate() {
        for name in layer {
            let s = output.graph.get(name).expect("layer member");
            let flag = if s.flagged { "  (review unresolved)" } else { "" };
            writeln!(out, "  {:<6} {:<7} {:<28} {}{flag}", i, s.scope.as_str(), s.name, s.constraint_ids.join(","))?;
        }
    }
    let bundle: &PolicyBundle = output.bundle();
    writeln!(out, "bundle {} ({} bytes)", bundle.hash(), bundle.size_bytes())?;
    for d in &output.diagnostics {
        writeln!(out, "  diagnostic: {d}")?;
    }
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> CliResult {
    let spec = load_task(&args.task)?;
    let instruction = args.instruction.clone().unwrap_or_else(|| spec.instruction.clone());
    let gateway = args.backend.gateway()?;
    let mut feedback: Box<dyn FeedbackSource> = match args.critic_seed {
        Some(seed) => Box::new(SimulationCritic::new(spec.clone(), seed)),
        None => Box::new(
            args.feedback
                .iter()
                .map(|p| load_feedback(p))
                .collect::<Result<VecDeque<_>, _>>()?,
        ),
    };
    prepare_output(&args.out, args.force)?;
    let provenance_path = args.out.join(PROVENANCE_FILE);
    let provenance = Provenance::to_file(&provenance_path).map_err(|e| CliError::io(&provenance_path, e))?;
    let result = generate_bundle(&spec, &instruction, &gateway, &provenance, feedback.as_mut());
    if let Some(path) = &args.record {
        write_file(path, gateway.to_script().canonical().to_json())?;
    }
    let output = result?;
    export(&output, &args.out)?;
    print_summary(&output, out).map_err(|e| CliError::infra(e.to_string()))?;
    Ok(Exit::from_success(output.diagnostics.is_empty()))
}
