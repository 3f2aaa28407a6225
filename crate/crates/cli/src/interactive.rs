//! A terminal refinement session: generate, run, show the result, take
//! typed feedback, repeat until `accept`.

use std::path::PathBuf;

use swarmgen_agent::action::Action;
use swarmgen_agent::feedback::FeedbackItem;
use swarmgen_agent::pipeline::{apply_feedback, generation_actions, Env, PipelineContext, PipelineOutput};
use swarmgen_agent::prompt::PromptLibrary;
use swarmgen_agent::provenance::Provenance;
use swarmgen_core::bundle::{PolicyBundle, SyntaxChecker};
use swarmgen_core::render::{render_frames, write_frames};

use crate::generate::{export, BackendArgs, PROVENANCE_FILE};
use crate::run::{print_report, trial, Policy, LOG_FILE};
use crate::task::load_task;
use crate::{prepare_output, write_file, CliError, CliResult, Exit, Io};

pub const ACCEPT: &str = "accept";
pub const BUNDLE_DIR: &str = "bundle";

#[derive(Debug, clap::Args)]
pub struct InteractiveArgs {
    /// Built-in task name or task file.
    #[arg(long)]
    pub task: String,
    /// Instruction text; defaults to the task's own.
    #[arg(long)]
    pub instruction: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Samples between rendered frames.
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::infra(e.to_string())
}

fn output_of(ctx: &PipelineContext) -> Option<PipelineOutput> {
    Some(PipelineOutput {
        pool: ctx.pool.clone()?,
        graph: ctx.graph.clone()?,
        assembly: ctx.assembly.clone()?,
        diagnostics: ctx.diagnostics.clone(),
        feedback: Vec::new(),
        cache: ctx.cache.clone(),
    })
}

/// Runs the current bundle, prints its report and parameters and writes the
/// log and frames under `out/round-<n>`.
fn show_round(args: &InteractiveArgs, spec: &swarmgen_core::TaskSpec, bundle: &PolicyBundle, round: usize, io: &mut Io) -> Result<(), CliError> {
    let out = &mut *io.out;
    let params: Vec<String> = bundle.parameters().iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "round {round}: bundle {} parameters {}", bundle.hash(), params.join(" ")).map_err(io_err)?;
    let policy = Policy::Bundle(Box::new(bundle.clone()));
    let (log, report) = trial(&policy, spec, args.seed, Default::default(), None)?;
    let dir = args.out.join(format!("round-{round}"));
    write_file(&dir.join(LOG_FILE), log.to_text())?;
    let frames = render_frames(&log, args.stride.max(1)).map_err(|e| CliError::infra(e.to_string()))?;
    let frames_dir = dir.join("frames");
    write_frames(&frames_dir, &frames).map_err(|e| CliError::infra(e.to_string()))?;
    print_report(&report, out).map_err(io_err)?;
    writeln!(out, "frames: {}", frames_dir.display()).map_err(io_err)
}

pub fn cmd_interactive(args: &InteractiveArgs, mut io: Io) -> CliResult {
    let spec = load_task(&args.task)?;
    let instruction = args.instruction.clone().unwrap_or_else(|| spec.instruction.clone());
    let gateway = args.backend.gateway()?;
    prepare_output(&args.out, args.force)?;
    let provenance_path = args.out.join(PROVENANCE_FILE);
    let provenance = Provenance::to_file(&provenance_path).map_err(|e| CliError::io(&provenance_path, e))?;
    let prompts = PromptLibrary::builtin();
    let env = Env::new(&gateway, &prompts, &provenance, &spec);
    let checker = SyntaxChecker;

    let mut ctx = PipelineContext::new(instruction);
    let mut generated = false;
    let mut stale = true;
    let mut round = 0;
    loop {
        if !generated {
            ctx = PipelineContext::new(ctx.instruction.clone());
            match generation_actions(&env, &checker).run(&mut ctx) {
                Ok(()) => generated = true,
                Err(e) => writeln!(io.out, "generation failed: {e}").map_err(io_err)?,
            }
        }
        if generated && stale {
            round += 1;
            for d in &ctx.diagnostics {
                writeln!(io.out, "diagnostic: {d}").map_err(io_err)?;
            }
            let bundle = ctx.assembly.as_ref().expect("generated").bundle.clone();
            if let Err(e) = show_round(args, &spec, &bundle, round, &mut io) {
                writeln!(io.out, "run failed: {e}").map_err(io_err)?;
            }
            stale = false;
        }
        if generated {
            write!(io.out, "feedback (or `{ACCEPT}`)> ").map_err(io_err)?;
        } else {
            write!(io.out, "press enter to retry generation (or `{ACCEPT}` to quit)> ").map_err(io_err)?;
        }
        io.out.flush().map_err(io_err)?;
        let mut line = String::new();
        let eof = io.input.read_line(&mut line).map_err(io_err)? == 0;
        let text = line.trim();
        if eof || text == ACCEPT {
            if eof {
                writeln!(io.out).map_err(io_err)?;
            }
            return match output_of(&ctx).filter(|_| generated) {
                Some(output) => {
                    let dir = args.out.join(BUNDLE_DIR);
                    export(&output, &dir)?;
                    writeln!(io.out, "accepted bundle {} in {}", output.bundle().hash(), dir.display()).map_err(io_err)?;
                    Ok(Exit::Ok)
                }
                None => Err(CliError::infra("session ended without a generated bundle")),
            };
        }
        if text.is_empty() || !generated {
            continue;
        }
        match apply_feedback(&env, &checker, &mut ctx, FeedbackItem::human(text)) {
            Ok(outcome) => {
                writeln!(io.out, "revised: {}", outcome.implicated.join(", ")).map_err(io_err)?;
                stale = true;
            }
            Err(e) => writeln!(io.out, "feedback failed: {e}").map_err(io_err)?,
        }
    }
}
