use std::io::Write;
use std::path::{Path, PathBuf};

use swarmgen_core::baselines::{expert_policy, BaselineParams};
use swarmgen_core::bundle::{check_bundle, PolicyBundle};
use swarmgen_core::metrics::evaluate;
use swarmgen_core::trial::{run_trial, TrialLog};
use swarmgen_core::{MetricReport, TaskSpec};
use swarmgen_deploy::{DeployPlan, DeployedController, Deployment, Launcher, LocalRuntime};

use crate::task::task_for;
use crate::{default_path, prepare_output, write_file, CliError, CliResult, Exit};

pub const LOG_FILE: &str = "trial.log";
pub const REPORT_FILE: &str = "report.toml";
pub const NODES_DIR: &str = "nodes";

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// `expert:<task>` or a bundle directory.
    #[arg(long)]
    pub policy: String,
    /// Built-in task name or task file; defaults to the policy's task.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Perception noise standard deviation, overriding the task's.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Baseline parameter file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Deploy plan for bundle runs.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Run a bundle's native equivalent in this process instead of
    /// deploying it to runtime nodes.
    #[arg(long)]
    pub in_process: bool,
}

/// What to run.
#[derive(Debug, Clone)]
pub enum Policy {
    Expert(String),
    Bundle(Box<PolicyBundle>),
}

impl Policy {
    pub fn parse(arg: &str) -> Result<Self, CliError> {
        match arg.strip_prefix("expert:") {
            Some(name) => Ok(Policy::Expert(name.to_string())),
            None => PolicyBundle::read_from(arg)
                .map(|b| Policy::Bundle(Box::new(b)))
                .map_err(|e| CliError::config(format!("bundle {arg}: {e}"))),
        }
    }
}

pub fn load_params(path: Option<&Path>) -> Result<BaselineParams, CliError> {
    match path {
        Some(p) => BaselineParams::load(p).map_err(|e| CliError::config(format!("{}: {e}", p.display()))),
        None => Ok(BaselineParams::default()),
    }
}

pub fn load_plan(path: Option<&Path>) -> Result<DeployPlan, CliError> {
    let default = default_path("deploy/plans/default.toml");
    match path {
        Some(p) => DeployPlan::load(p).map_err(|e| CliError::config(e.to_string())),
        None if default.is_file() => DeployPlan::load(default).map_err(|e| CliError::config(e.to_string())),
        None => Ok(DeployPlan::default()),
    }
}

/// Deploys `bundle` to one runtime node per robot under `root`, runs the
/// trial through them and tears the nodes down again.
pub fn deployed_trial(
    bundle: &PolicyBundle,
    spec: &TaskSpec,
    seed: u64,
    params: BaselineParams,
    plan: DeployPlan,
    root: &Path,
) -> Result<TrialLog, CliError> {
    let launcher = Launcher::detect();
    let mut deployment = Deployment::new(root, spec.robot_count as u32, plan, launcher.clone())
        .map_err(|e| CliError::io(root, e))?
        .with_params(params);
    let failures: Vec<String> = deployment
        .deploy(bundle)
        .into_iter()
        .filter_map(|(id, r)| r.err().map(|e| format!("node {id}: {e}")))
        .collect();
    if !failures.is_empty() {
        deployment.teardown();
        return Err(CliError::infra(format!("deployment failed\n  {}", failures.join("\n  "))));
    }
    let station = LocalRuntime::spawn(&launcher, params).map_err(|e| CliError::infra(format!("allocator: {e}")))?;
    let result = {
        let mut controller = DeployedController::new(&mut deployment, &station, bundle.clone());
        run_trial(&mut controller, spec, seed)
    };
    station.shutdown();
    deployment.teardown();
    result.map_err(|e| CliError::infra(format!("trial: {e}")))
}

/// Runs one trial of `policy` and evaluates it.
pub fn trial(
    policy: &Policy,
    spec: &TaskSpec,
    seed: u64,
    params: BaselineParams,
    deploy: Option<(DeployPlan, &Path)>,
) -> Result<(TrialLog, MetricReport), CliError> {
    let log = match (policy, deploy) {
        (Policy::Expert(name), _) => {
            let mut p = expert_policy(name, params).map_err(|e| CliError::config(e.to_string()))?;
            run_trial(&mut p, spec, seed).map_err(|e| CliError::infra(format!("trial: {e}")))?
        }
        (Policy::Bundle(b), None) => {
            let mut p = b.expert_equivalent(params);
            run_trial(&mut p, spec, seed).map_err(|e| CliError::infra(format!("trial: {e}")))?
        }
        (Policy::Bundle(b), Some((plan, root))) => deployed_trial(b, spec, seed, params, plan, root)?,
    };
    let report = evaluate(&log, spec).map_err(|e| CliError::infra(format!("evaluate: {e}")))?;
    Ok((log, report))
}

pub fn print_report(report: &MetricReport, out: &mut dyn Write) -> std::io::Result<()> {
    let verdict = if report.success { "success" } else { "failure" };
    writeln!(out, "{} seed {}: {verdict}", report.task.as_str(), report.seed)?;
    for e in &report.entries {
        let mark = if e.pass { "ok  " } else { "FAIL" };
        writeln!(out, "  {mark} {:<12} {:>10.4}  needs {} {}", e.name, e.value, e.comparator.symbol(), e.threshold)?;
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult {
    let policy = Policy::parse(&args.policy)?;
    let kind = match &policy {
        Policy::Expert(name) => name
            .parse()
            .map_err(|_| CliError::config(format!("no expert for task {name:?}")))?,
        Policy::Bundle(b) => b.manifest.task,
    };
    let mut spec = task_for(kind, args.task.as_deref())?;
    if let Some(sigma) = args.sigma {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(CliError::config(format!("sigma must be a non-negative number, got {sigma}")));
        }
        spec = spec.with_noise(sigma);
    }
    if let Policy::Bundle(b) = &policy {
        let diagnostics = check_bundle(b);
        if !diagnostics.is_empty() {
            let list: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
            return Err(CliError::config(format!("bundle fails its check:\n  {}", list.join("\n  "))));
        }
    }
    let params = load_params(args.params.as_deref())?;
    prepare_output(&args.out, args.force)?;
    let nodes = args.out.join(NODES_DIR);
    let deploy = match (&policy, args.in_process) {
        (Policy::Bundle(_), false) => Some((load_plan(args.plan.as_deref())?, nodes.as_path())),
        _ => None,
    };
    let (log, report) = trial(&policy, &spec, args.seed, params, deploy)?;
    write_file(&args.out.join(LOG_FILE), log.to_text())?;
    write_file(&args.out.join(REPORT_FILE), report.to_toml_string())?;
    print_report(&report, out).map_err(|e| CliError::infra(e.to_string()))?;
    writeln!(out, "outcome {} after {} ticks", log.outcome.as_str(), log.ticks_run)
        .map_err(|e| CliError::infra(e.to_string()))?;
    Ok(Exit::from_success(report.success))
}
