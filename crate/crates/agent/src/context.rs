//! The shared prompt context: agent roles and descriptions of the
//! environment, the robots and the policy APIs.

use swarmgen_core::model::{RobotKind, Shape};
use swarmgen_core::TaskSpec;

use crate::prompt::PromptContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agent {
    ConstraintAnalyst,
    SkillDesigner,
    GraphBuilder,
    CodeWriter,
    CodeReviewer,
    FeedbackAnalyst,
    Critic,
}

impl Agent {
    pub fn as_str(self) -> &'static str {
        match self {
            Agent::ConstraintAnalyst => "constraint-analyst",
            Agent::SkillDesigner => "skill-designer",
            Agent::GraphBuilder => "graph-builder",
            Agent::CodeWriter => "code-writer",
            Agent::CodeReviewer => "code-reviewer",
            Agent::FeedbackAnalyst => "feedback-analyst",
            Agent::Critic => "critic",
        }
    }

    pub fn role(self) -> &'static str {
        match self {
            Agent::ConstraintAnalyst => {
                "You analyze instructions for a team of mobile robots and break each one into the \
                 requirements a correct control policy has to meet."
            }
            Agent::SkillDesigner => {
                "You design the function library of a multi-robot control policy. You name functions \
                 and describe them; you do not implement them."
            }
            Agent::GraphBuilder => "You work out which functions of a multi-robot control policy call which others.",
            Agent::CodeWriter => {
                "You write Python functions for a multi-robot control policy. Functions are short, \
                 deterministic and call only the documented APIs."
            }
            Agent::CodeReviewer => {
                "You review Python functions of a multi-robot control policy for logic errors and for \
                 violations of the stated constraints."
            }
            Agent::FeedbackAnalyst => {
                "You maintain a multi-robot control policy and decide which of its functions a piece of \
                 feedback concerns."
            }
            Agent::Critic => "You judge recorded runs of a multi-robot task from still frames.",
        }
    }
}

/// Called by a robot's own controller at every step.
pub const LOCAL_APIS: &[(&str, &str)] = &[
    ("get_self_id()", "this robot's integer id"),
    ("get_self_position()", "(x, y) of this robot in meters"),
    ("get_self_velocity()", "(vx, vy) of this robot in m/s"),
    ("get_self_radius()", "body radius in meters"),
    (
        "get_surrounding_robots_info()",
        "list of dicts with id, position, velocity and radius of robots within sensing range",
    ),
    (
        "get_surrounding_obstacles_info()",
        "list of dicts with position and radius of obstacles within sensing range",
    ),
    ("get_prey_position()", "(x, y) of the prey or leader, or None if not visible"),
    ("get_assigned_goal()", "goal set by the global skill, or None"),
    ("get_arena_bounds()", "(x_min, y_min, x_max, y_max)"),
    ("set_velocity(v)", "command velocity (vx, vy); clipped to the speed limit"),
];

/// Called once by the central allocator before the first step.
pub const GLOBAL_APIS: &[(&str, &str)] = &[
    ("get_all_robots_id()", "ids of all controllable robots"),
    ("get_all_robots_initial_position()", "dict from id to starting (x, y)"),
    ("get_prey_initial_position()", "(x, y) of the prey or leader at the start, or None"),
    ("get_task_layout()", "dict with obstacles, landmarks, regions and target shape"),
    ("set_assignments(goals)", "dict from id to a goal the robot reads with get_assigned_goal()"),
];

pub fn describe_apis() -> String {
    let list = |apis: &[(&str, &str)]| {
        apis.iter()
            .map(|(sig, doc)| format!("- {sig}: {doc}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    format!(
        "Local APIs, callable only by a robot about itself:\n{}\n\nGlobal APIs, callable only by the central \
         allocator:\n{}",
        list(LOCAL_APIS),
        list(GLOBAL_APIS)
    )
}

pub fn describe_environment(spec: &TaskSpec) -> String {
    let b = spec.layout.bounds;
    let mut lines = vec![
        "The environment is composed of a 2D plane with obstacles and robots.".to_string(),
        format!(
            "The arena spans x in [{:.2}, {:.2}] m and y in [{:.2}, {:.2}] m; robots must stay inside it.",
            b.min.x, b.max.x, b.min.y, b.max.y
        ),
    ];
    match spec.layout.obstacles.len() {
        0 => lines.push("This task has no static obstacles.".into()),
        n => lines.push(format!("There are {n} static circular obstacles.")),
    }
    match spec.kind.target_kind() {
        Some(RobotKind::Prey) => lines.push("One prey robot moves by itself; it cannot be commanded.".into()),
        Some(RobotKind::Leader) => lines.push("One leader robot moves by itself; it cannot be commanded.".into()),
        _ => {}
    }
    if !spec.layout.landmarks.is_empty() {
        let pts: Vec<String> = spec
            .layout
            .landmarks
            .iter()
            .map(|p| format!("({:.2}, {:.2})", p.x, p.y))
            .collect();
        lines.push(format!("Landmarks: {}.", pts.join(", ")));
    }
    for (i, r) in spec.layout.regions.iter().enumerate() {
        lines.push(format!(
            "Region {} is centred at ({:.2}, {:.2}) with radius {:.2} m.",
            i + 1,
            r.center.x,
            r.center.y,
            r.radius
        ));
    }
    match spec.layout.shape {
        Some(Shape::Circle { center, radius }) => lines.push(format!(
            "The target shape is a circle centred at ({:.2}, {:.2}) with radius {radius:.2} m.",
            center.x, center.y
        )),
        Some(Shape::Line { from, to }) => lines.push(format!(
            "The target shape is the segment from ({:.2}, {:.2}) to ({:.2}, {:.2}).",
            from.x, from.y, to.x, to.y
        )),
        None => {}
    }
    lines.join("\n")
}

pub fn describe_robot(spec: &TaskSpec) -> String {
    let r = &spec.robot;
    format!(
        "There are {} controllable robots. Each is a disc of radius {:.2} m that moves with the velocity it \
         commands. The maximum speed of each robot is {} m/s. Velocity commands are applied every {} s. A \
         robot senses robots and obstacles within {:.2} m.",
        spec.robot_count, r.body_radius, r.v_max, spec.trial.dt, r.sense_radius
    )
}

/// `role`, `environment`, `robot`, `apis` and `instruction` for `agent`.
pub fn base_context(agent: Agent, spec: &TaskSpec, instruction: &str) -> PromptContext {
    [
        ("role", agent.role().to_string()),
        ("environment", describe_environment(spec)),
        ("robot", describe_robot(spec)),
        ("apis", describe_apis()),
        ("instruction", instruction.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::render_prompt;
    use swarmgen_core::TaskKind;

    #[test]
    fn environment_and_api_wording() {
        let spec = TaskSpec::default_for(TaskKind::Encircling);
        let ctx = base_context(Agent::ConstraintAnalyst, &spec, &spec.instruction);
        let turns = render_prompt("constraints", &ctx).unwrap();
        let system = &turns[0].content;
        assert!(system.contains("composed of a 2D plane with obstacles"));
        assert!(system.contains("The maximum speed of each robot is 0.5 m/s"));
        for api in ["get_all_robots_id", "get_all_robots_initial_position", "get_self_position", "get_surrounding_robots_info"] {
            assert!(system.contains(api), "{api}");
        }
        assert!(system.contains("prey robot"));
        assert!(turns[1].content.contains(&spec.instruction));
    }

    #[test]
    fn descriptions_follow_the_spec() {
        let spec = TaskSpec::default_for(TaskKind::Exploration);
        let env = describe_environment(&spec);
        assert_eq!(env.matches('(').count(), spec.layout.landmarks.len());
        let clustering = describe_environment(&TaskSpec::default_for(TaskKind::Clustering));
        assert!(clustering.contains("Region 4"));
    }
}
