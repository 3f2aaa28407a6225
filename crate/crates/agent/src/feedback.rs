//! Feedback on a generated policy: from a human, from failed code checks,
//! or from a critic judging a trial.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use swarmgen_core::bundle::{Diagnostic, PolicyBundle};
use swarmgen_core::metrics::evaluate;
use swarmgen_core::{run_trial, MetricReport, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Human,
    CodeBug,
    Critic,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::Human => "human",
            FeedbackKind::CodeBug => "code_bug",
            FeedbackKind::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedbackPayload {
    None,
    Diagnostics { diagnostics: Vec<Diagnostic> },
    Metrics { report: MetricReport },
    Verdict { success: bool },
    ParameterEdit { name: String, value: f64 },
}

/// The kind is fixed when the item is made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    kind: FeedbackKind,
    text: String,
    payload: FeedbackPayload,
}

impl FeedbackItem {
    pub fn human(text: impl Into<String>) -> Self {
        FeedbackItem {
            kind: FeedbackKind::Human,
            text: text.into(),
            payload: FeedbackPayload::None,
        }
    }

    pub fn parameter_edit(text: impl Into<String>, name: impl Into<String>, value: f64) -> Self {
        FeedbackItem {
            kind: FeedbackKind::Human,
            text: text.into(),
            payload: FeedbackPayload::ParameterEdit {
                name: name.into(),
                value,
            },
        }
    }

    /// A traceback or checker output; `diagnostics` may be empty.
    pub fn code_bug(text: impl Into<String>, diagnostics: Vec<Diagnostic>) -> Self {
        FeedbackItem {
            kind: FeedbackKind::CodeBug,
            text: text.into(),
            payload: FeedbackPayload::Diagnostics { diagnostics },
        }
    }

    pub fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        let text = diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n");
        Self::code_bug(text, diagnostics)
    }

    pub fn critic(text: impl Into<String>, success: bool) -> Self {
        FeedbackItem {
            kind: FeedbackKind::Critic,
            text: text.into(),
            payload: FeedbackPayload::Verdict { success },
        }
    }

    pub fn kind(&self) -> FeedbackKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn payload(&self) -> &FeedbackPayload {
        &self.payload
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match &self.payload {
            FeedbackPayload::Diagnostics { diagnostics } => diagnostics,
            _ => &[],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty() && self.diagnostics().is_empty()
    }

    /// A critic verdict that needs no further changes.
    pub fn is_success(&self) -> bool {
        match &self.payload {
            FeedbackPayload::Verdict { success } => *success,
            FeedbackPayload::Metrics { report } => report.success,
            _ => false,
        }
    }
}

/// Deterministic critic: turns a metric report into pass/fail feedback that
/// names each failing metric with its value and threshold.
pub fn metric_critic(report: &MetricReport) -> FeedbackItem {
    let describe = |e: &swarmgen_core::model::MetricEntry| {
        format!("{} = {:.4} (needs {} {})", e.name, e.value, e.comparator.symbol(), e.threshold)
    };
    let text = if report.success {
        let all: Vec<String> = report.entries.iter().map(describe).collect();
        format!("success: {} trial with seed {} met every criterion: {}", report.task, report.seed, all.join("; "))
    } else {
        let failing: Vec<String> = report.failing().map(describe).collect();
        let reason = if failing.is_empty() {
            "the policy failed during the trial".to_string()
        } else {
            failing.join("; ")
        };
        format!("failure: {} trial with seed {}: {reason}", report.task, report.seed)
    };
    FeedbackItem {
        kind: FeedbackKind::Critic,
        text,
        payload: FeedbackPayload::Metrics { report: report.clone() },
    }
}

/// Where the improvement loop gets its next piece of feedback.
pub trait FeedbackSource {
    /// `None` ends the loop.
    fn next(&mut self, bundle: &PolicyBundle) -> Option<FeedbackItem>;
}

/// No feedback: the loop ends immediately.
pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn next(&mut self, _: &PolicyBundle) -> Option<FeedbackItem> {
        None
    }
}

/// Hands out prepared items in order.
impl FeedbackSource for VecDeque<FeedbackItem> {
    fn next(&mut self, _: &PolicyBundle) -> Option<FeedbackItem> {
        self.pop_front()
    }
}

/// Runs the bundle's native equivalent for one seeded trial and judges it
/// with [`metric_critic`].
pub struct SimulationCritic {
    pub spec: TaskSpec,
    pub seed: u64,
    pub params: swarmgen_core::baselines::BaselineParams,
    pub last_report: Option<MetricReport>,
}

impl SimulationCritic {
    pub fn new(spec: TaskSpec, seed: u64) -> Self {
        SimulationCritic {
            spec,
            seed,
            params: Default::default(),
            last_report: None,
        }
    }
}

impl FeedbackSource for SimulationCritic {
    fn next(&mut self, bundle: &PolicyBundle) -> Option<FeedbackItem> {
        let mut policy = bundle.expert_equivalent(self.params);
        let item = match run_trial(&mut policy, &self.spec, self.seed)
            .map_err(|e| e.to_string())
            .and_then(|log| evaluate(&log, &self.spec).map_err(|e| e.to_string()))
        {
            Ok(report) => {
                let item = metric_critic(&report);
                self.last_report = Some(report);
                item
            }
            Err(e) => FeedbackItem::code_bug(format!("trial could not run: {e}"), Vec::new()),
        };
        Some(item)
    }
}
