//! Seeded multi-trial benchmarks.
//!
//! Every trial persists its [`MetricReport`] under `<out>/trials/<label>/`
//! before the report is assembled, and the report is computed from those
//! files alone. An interrupted run resumes by skipping trials whose file
//! already exists.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swarmgen_agent::prompt::BUILTIN;
use swarmgen_agent::provenance::Provenance;
use swarmgen_core::bundle::PolicyBundle;
use swarmgen_core::model::Comparator;
use swarmgen_core::{MetricReport, TaskKind, TaskSpec};

use crate::generate::{generate_bundle, BackendArgs};
use crate::run::{trial, Policy};
use crate::task::load_task;
use crate::{write_file, CliError, CliResult, Exit};

pub const PLAN_FILE: &str = "plan.toml";
pub const REPORT_FILE: &str = "report.toml";
pub const TRIALS_DIR: &str = "trials";

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Benchmark plan file.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trials run concurrently; defaults to the number of cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Discard results of a different or earlier plan in `--out`.
    #[arg(long)]
    pub force: bool,
    /// Exit 1 when any task's success rate is below this.
    #[arg(long)]
    pub min_rate: Option<f64>,
}

/// Where a benchmark's policies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySource {
    /// The built-in expert for each task.
    Expert,
    /// One bundle directory for every task.
    Bundle { path: PathBuf },
    /// A fresh generation from the task's instruction for every trial.
    /// `{task}` in `backend` is replaced by the task label.
    Pipeline {
        backend: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profiles: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub name: String,
    pub trials: u32,
    #[serde(default)]
    pub seed_base: u64,
    /// Built-in task names or task files relative to the plan.
    pub tasks: Vec<String>,
    /// Perception noise applied to every task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub policy: PolicySource,
}

impl BenchmarkPlan {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let plan: Self = toml::from_str(text).map_err(|e| CliError::config(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(CliError::config("plan: trials must be at least 1"));
        }
        if self.tasks.is_empty() {
            return Err(CliError::config("plan: no tasks"));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CliError::config(format!("plan: sigma must be non-negative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.trials as u64).map(|i| self.seed_base + i)
    }
}

/// How one trial obtains its policy.
#[derive(Debug, Clone)]
pub enum TrialPolicy {
    Fixed(Policy),
    Generated { backend: BackendArgs, instruction: String },
}

/// One benchmark cell: a labelled task and the policy to try on it.
#[derive(Debug, Clone)]
pub struct Job {
    pub label: String,
    pub spec: TaskSpec,
    pub policy: TrialPolicy,
}

/// Reads `<base>/<rel>` for relative paths.
pub fn resolve(base: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base.join(rel)
    }
}

/// `replay:` paths in a file-provided backend flag are relative to `base`.
pub fn resolve_backend(flag: &str, base: &Path) -> String {
    match flag.strip_prefix("replay:") {
        Some(path) => format!("replay:{}", resolve(base, Path::new(path)).display()),
        None => flag.to_string(),
    }
}

fn task_label(arg: &str) -> String {
    Path::new(arg)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(arg)
        .to_string()
}

/// Expands `plan` into one job per task.
pub fn plan_jobs(plan: &BenchmarkPlan, base: &Path) -> Result<Vec<Job>, CliError> {
    let fixed_bundle = match &plan.policy {
        PolicySource::Bundle { path } => {
            let path = resolve(base, path);
            let bundle = PolicyBundle::read_from(&path)
                .map_err(|e| CliError::config(format!("bundle {}: {e}", path.display())))?;
            Some(bundle)
        }
        _ => None,
    };
    let mut labels = BTreeSet::new();
    let mut jobs = Vec::with_capacity(plan.tasks.len());
    for arg in &plan.tasks {
        let spec = if let Ok(kind) = arg.parse::<TaskKind>() {
            TaskSpec::default_for(kind)
        } else {
            load_task(&resolve(base, Path::new(arg)).display().to_string())?
        };
        let spec = match plan.sigma {
            Some(s) => spec.with_noise(s),
            None => spec,
        };
        let label = task_label(arg);
        if !labels.insert(label.clone()) {
            return Err(CliError::config(format!("plan lists task {label:?} twice")));
        }
        let policy = match &plan.policy {
            PolicySource::Expert => TrialPolicy::Fixed(Policy::Expert(spec.kind.as_str().to_string())),
            PolicySource::Bundle { .. } => {
                let bundle = fixed_bundle.clone().expect("loaded above");
                if bundle.manifest.task != spec.kind {
                    return Err(CliError::config(format!(
                        "bundle is for {} but the plan lists {label}",
                        bundle.manifest.task.as_str()
                    )));
                }
                TrialPolicy::Fixed(Policy::Bundle(Box::new(bundle)))
            }
            PolicySource::Pipeline { backend, profiles } => TrialPolicy::Generated {
                backend: BackendArgs {
                    backend: resolve_backend(&backend.replace("{task}", &label), base),
                    profiles: resolve(base, profiles.as_deref().unwrap_or(Path::new("backends.toml"))),
                },
                instruction: spec.instruction.clone(),
            },
        };
        jobs.push(Job { label, spec, policy });
    }
    Ok(jobs)
}

fn trial_path(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join(TRIALS_DIR).join(label).join(format!("seed-{seed}.toml"))
}

/// A failed trial that produced no metrics.
fn failed(kind: TaskKind, seed: u64) -> MetricReport {
    MetricReport {
        task: kind,
        seed,
        success: false,
        entries: Vec::new(),
    }
}

/// Runs one trial. Configuration errors abort the benchmark; anything else
/// counts as a failed trial.
fn run_one(job: &Job, seed: u64) -> Result<(MetricReport, Option<String>), CliError> {
    let params = Default::default();
    let outcome = match &job.policy {
        TrialPolicy::Fixed(policy) => trial(policy, &job.spec, seed, params, None).map(|(_, r)| r),
        TrialPolicy::Generated { backend, instruction } => {
            let gateway = backend.gateway()?;
            let provenance = Provenance::in_memory();
            let mut feedback = VecDeque::new();
            match generate_bundle(&job.spec, instruction, &gateway, &provenance, &mut feedback) {
                Ok(output) if output.diagnostics.is_empty() => {
                    let policy = Policy::Bundle(Box::new(output.bundle().clone()));
                    trial(&policy, &job.spec, seed, params, None).map(|(_, r)| r)
                }
                Ok(output) => Err(CliError::infra(format!("{} diagnostics left", output.diagnostics.len()))),
                Err(e) => Err(e),
            }
        }
    };
    match outcome {
        Ok(report) => Ok((report, None)),
        Err(e) if e.exit == Exit::Config => Err(e),
        Err(e) => Ok((failed(job.spec.kind, seed), Some(e.message))),
    }
}

/// Runs every trial of `jobs` that has no persisted report yet, on up to
/// `workers` threads. Returns how many trials ran.
pub fn run_jobs(jobs: &[Job], seeds: &[u64], out: &Path, workers: usize) -> Result<usize, CliError> {
    let pending: Vec<(&Job, u64)> = jobs
        .iter()
        .flat_map(|j| seeds.iter().map(move |&s| (j, s)))
        .filter(|(j, s)| !trial_path(out, &j.label, *s).is_file())
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::infra(e.to_string()))?;
    pool.install(|| {
        pending.par_iter().try_for_each(|&(job, seed)| {
            let (report, error) = run_one(job, seed)?;
            let path = trial_path(out, &job.label, seed);
            if let Some(message) = error {
                write_file(&path.with_extension("error"), message + "\n")?;
            }
            // Rename so an interrupted write never leaves a partial report.
            let tmp = path.with_extension("toml.tmp");
            write_file(&tmp, report.to_toml_string())?;
            std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
        })
    })?;
    Ok(pending.len())
}

/// Reads the persisted reports of `labels` for `seeds`.
pub fn load_trials(out: &Path, labels: &[String], seeds: &[u64]) -> Result<BTreeMap<String, Vec<MetricReport>>, CliError> {
    labels
        .iter()
        .map(|label| {
            let reports = seeds
                .iter()
                .map(|&seed| {
                    let path = trial_path(out, label, seed);
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    MetricReport::from_toml_str(&text)
                        .map_err(|e| CliError::infra(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((label.clone(), reports))
        })
        .collect()
}

/// What produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub policy: String,
    pub backend: String,
    pub code_version: String,
    pub plan_hash: String,
    /// SHA-256 of every built-in prompt template, by name.
    pub templates: BTreeMap<String, String>,
}

impl Fingerprint {
    pub fn new(policy: &str, backend: &str, plan_hash: String) -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| (name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))))
            .collect();
        Fingerprint {
            policy: policy.to_string(),
            backend: backend.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            plan_hash,
            templates,
        }
    }

    fn of_plan(plan: &BenchmarkPlan) -> Self {
        let (policy, backend) = match &plan.policy {
            PolicySource::Expert => ("expert".to_string(), "none"),
            PolicySource::Bundle { path } => (format!("bundle:{}", path.display()), "none"),
            PolicySource::Pipeline { backend, .. } => ("pipeline".to_string(), backend.as_str()),
        };
        Self::new(&policy, backend, plan.hash())
    }
}

/// Distribution of one metric over a task's trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub comparator: Comparator,
    pub threshold: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub passes: u32,
    /// In seed order; trials without metrics are absent.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub kind: TaskKind,
    pub trials: u32,
    pub successes: u32,
    pub rate: f64,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl TaskSummary {
    /// Aggregates `reports`; `rate` is exactly successes / trials.
    pub fn from_reports(label: &str, kind: TaskKind, reports: &[MetricReport]) -> Self {
        let trials = reports.len() as u32;
        let successes = reports.iter().filter(|r| r.success).count() as u32;
        let mut metrics: BTreeMap<String, MetricSummary> = BTreeMap::new();
        for entry in reports.iter().flat_map(|r| &r.entries) {
            let m = metrics.entry(entry.name.clone()).or_insert_with(|| MetricSummary {
                comparator: entry.comparator,
                threshold: entry.threshold,
                mean: 0.0,
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                passes: 0,
                values: Vec::new(),
            });
            m.values.push(entry.value);
            m.min = m.min.min(entry.value);
            m.max = m.max.max(entry.value);
            m.passes += entry.pass as u32;
        }
        for m in metrics.values_mut() {
            m.mean = m.values.iter().sum::<f64>() / m.values.len() as f64;
        }
        TaskSummary {
            task: label.to_string(),
            kind,
            trials,
            successes,
            rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub plan: String,
    pub fingerprint: Fingerprint,
    /// Sorted by task label.
    pub tasks: Vec<TaskSummary>,
}

impl BenchReport {
    pub fn aggregate(plan: &str, fingerprint: Fingerprint, trials: &BTreeMap<String, Vec<MetricReport>>, kinds: &BTreeMap<String, TaskKind>) -> Self {
        let tasks = trials
            .iter()
            .map(|(label, reports)| TaskSummary::from_reports(label, kinds[label], reports))
            .collect();
        BenchReport {
            plan: plan.to_string(),
            fingerprint,
            tasks,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("bench report serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn render_table(&self) -> String {
        let mut s = format!("{:<16} {:>7} {:>9} {:>6}  metrics (mean)\n", "task", "trials", "successes", "rate");
        for t in &self.tasks {
            let metrics: Vec<String> = t.metrics.iter().map(|(n, m)| format!("{n}={:.4}", m.mean)).collect();
            s += &format!(
                "{:<16} {:>7} {:>9} {:>6.2}  {}\n",
                t.task,
                t.trials,
                t.successes,
                t.rate,
                metrics.join(" ")
            );
        }
        s
    }

    pub fn min_rate(&self) -> f64 {
        self.tasks.iter().map(|t| t.rate).fold(1.0, f64::min)
    }
}

/// Readies `out` for `plan_text`: an existing run of the same plan is kept
/// for resumption, anything else needs `force`.
pub fn prepare_resumable(out: &Path, plan_text: &str, force: bool) -> Result<bool, CliError> {
    let plan_path = out.join(PLAN_FILE);
    let same = std::fs::read_to_string(&plan_path).is_ok_and(|t| t == plan_text);
    if same && !force {
        return Ok(true);
    }
    crate::prepare_output(out, force)?;
    write_file(&plan_path, plan_text)?;
    Ok(false)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `plan` into `out` and returns the assembled report.
pub fn bench(plan: &BenchmarkPlan, base: &Path, out: &Path, workers: usize, force: bool) -> Result<BenchReport, CliError> {
    let jobs = plan_jobs(plan, base)?;
    prepare_resumable(out, &plan.to_toml_string(), force)?;
    let seeds: Vec<u64> = plan.seeds().collect();
    run_jobs(&jobs, &seeds, out, workers)?;
    let labels: Vec<String> = jobs.iter().map(|j| j.label.clone()).collect();
    let kinds = jobs.iter().map(|j| (j.label.clone(), j.spec.kind)).collect();
    let trials = load_trials(out, &labels, &seeds)?;
    let report = BenchReport::aggregate(&plan.name, Fingerprint::of_plan(plan), &trials, &kinds);
    write_file(&out.join(REPORT_FILE), report.to_toml_string())?;
    Ok(report)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let plan = BenchmarkPlan::load(&args.plan)?;
    let base = args.plan.parent().unwrap_or(Path::new("."));
    let report = bench(&plan, base, &args.out, args.workers.unwrap_or_else(default_workers), args.force)?;
    out.write_all(report.render_table().as_bytes())
        .map_err(|e| CliError::infra(e.to_string()))?;
    Ok(match args.min_rate {
        Some(min) => Exit::from_success(report.min_rate() >= min),
        None => Exit::Ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use swarmgen_core::model::MetricEntry;

    fn entry(name: &str, value: f64, pass: bool) -> MetricEntry {
        MetricEntry {
            name: name.into(),
            value,
            threshold: 1.0,
            comparator: Comparator::Lt,
            pass,
        }
    }

    #[test]
    fn plans_reject_zero_trials_and_unknown_keys() {
        let ok = "name = \"p\"\ntrials = 2\ntasks = [\"aggregation\"]\n[policy]\nsource = \"expert\"\n";
        let plan = BenchmarkPlan::from_toml_str(ok).unwrap();
        assert_eq!(plan.seeds().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(BenchmarkPlan::from_toml_str(&plan.to_toml_string()).unwrap(), plan);
        let zero = ok.replace("trials = 2", "trials = 0");
        assert_eq!(BenchmarkPlan::from_toml_str(&zero).unwrap_err().exit, Exit::Config);
        let extra = ok.replace("trials = 2", "trials = 2\nworkers = 3");
        assert!(BenchmarkPlan::from_toml_str(&extra).is_err());
    }

    #[test]
    fn summaries_count_exactly() {
        let reports = vec![
            MetricReport::new(TaskKind::Aggregation, 0, vec![entry("d_maxmin", 0.5, true)]),
            MetricReport::new(TaskKind::Aggregation, 1, vec![entry("d_maxmin", 1.5, false)]),
            failed(TaskKind::Aggregation, 2),
        ];
        let s = TaskSummary::from_reports("aggregation", TaskKind::Aggregation, &reports);
        assert_eq!((s.trials, s.successes), (3, 1));
        assert_eq!(s.rate, 1.0 / 3.0);
        let m = &s.metrics["d_maxmin"];
        assert_eq!((m.mean, m.min, m.max, m.passes), (1.0, 0.5, 1.5, 1));
        assert_eq!(m.values, vec![0.5, 1.5]);
    }

    #[test]
    fn replay_paths_resolve_against_the_plan() {
        let base = Path::new("/plans");
        assert_eq!(resolve_backend("replay:s.json", base), "replay:/plans/s.json");
        assert_eq!(resolve_backend("replay:/abs.json", base), "replay:/abs.json");
        assert_eq!(resolve_backend("remote:main", base), "remote:main");
    }
}
