//! A deterministic stand-in for a live model on the encircling task, used to
//! record the checked-in replay fixtures and to drive failure scenarios.

#![allow(dead_code)]

use std::path::PathBuf;

use swarmgen_agent::context::Agent;
use swarmgen_agent::gateway::{Backend, ChatTurn, Completion, GatewayError, Role, Usage};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    repo_root().join("fixtures").join(rel)
}

/// Rewrites checked-in fixtures instead of comparing against them.
pub fn updating_fixtures() -> bool {
    std::env::var("SWARMGEN_UPDATE_FIXTURES").is_ok_and(|v| v == "1")
}

pub const CONSTRAINTS: &str = r#"[
  {"name": "CollisionAvoidance", "description": "Never let the body of a robot come within the safety margin of another robot or an obstacle."},
  {"name": "PreyTracking", "description": "Follow the prey as it moves so the formation stays centred on it."},
  {"name": "EncirclingFormation", "description": "Hold every robot on a circle of the desired radius around the prey."},
  {"name": "UniformDistribution", "description": "Spread the robots evenly in angle around the circle."},
  {"name": "SpeedLimit", "description": "Never command a speed above 0.5 m/s."},
  {"name": "ArenaBoundary", "description": "Stay inside the arena."}
]"#;

pub const SKILLS: &str = r#"[
  {"name": "Allocate_initial_angles", "description": "Give every robot its own angle on the circle, evenly spaced.", "scope": "global", "constraints": ["UniformDistribution"]},
  {"name": "Get_prey_position", "description": "Current prey position, falling back to the robot's own position when the prey is not visible.", "scope": "local", "constraints": ["PreyTracking"]},
  {"name": "Compute_target_position", "description": "Point on the circle around the prey at this robot's assigned angle.", "scope": "local", "constraints": ["EncirclingFormation", "UniformDistribution"]},
  {"name": "Avoid_collisions", "description": "Repulsive velocity away from nearby robots and obstacles.", "scope": "local", "constraints": ["CollisionAvoidance"]},
  {"name": "Limit_velocity", "description": "Clip a velocity to the speed limit and stop motion out of the arena.", "scope": "local", "constraints": ["SpeedLimit", "ArenaBoundary"]},
  {"name": "Update_velocity", "description": "Steer toward the target point while avoiding collisions and set the velocity.", "scope": "local", "constraints": ["PreyTracking", "EncirclingFormation"]}
]"#;

pub const GRAPH: &str = r#"{
  "Allocate_initial_angles": [],
  "Get_prey_position": [],
  "Compute_target_position": ["Get_prey_position"],
  "Avoid_collisions": [],
  "Limit_velocity": [],
  "Update_velocity": ["Compute_target_position", "Avoid_collisions", "Limit_velocity"]
}"#;

pub const SKILL_NAMES: [&str; 6] = [
    "Allocate_initial_angles",
    "Get_prey_position",
    "Compute_target_position",
    "Avoid_collisions",
    "Limit_velocity",
    "Update_velocity",
];

const ALLOCATE: &str = r#"import math


def Allocate_initial_angles():
    ids = sorted(get_all_robots_id())
    count = len(ids)
    angles = {}
    for k, robot_id in enumerate(ids):
        angles[robot_id] = 2.0 * math.pi * k / count
    set_assignments(angles)"#;

const GET_PREY: &str = r#"def Get_prey_position():
    prey = get_prey_position()
    if prey is None:
        return get_self_position()
    return prey"#;

fn compute_target(radius: &str) -> String {
    format!(
        r#"import math

desired_radius = {radius}


def Compute_target_position():
    px, py = Get_prey_position()
    angle = get_assigned_goal()
    if angle is None:
        angle = 0.0
    return (px + desired_radius * math.cos(angle), py + desired_radius * math.sin(angle))"#
    )
}

const AVOID_V1: &str = r#"import math

CLEARANCE_MARGIN = 0.1
AVOID_GAIN = 0.8


def Avoid_collisions():
    x, y = get_self_position()
    own = get_self_radius()
    ax, ay = 0.0, 0.0
    for other in get_surrounding_robots_info():
        ox, oy = other["position"]
        dx, dy = x - ox, y - oy
        dist = math.hypot(dx, dy)
        reach = own + other["radius"] + CLEARANCE_MARGIN
        if 1e-9 < dist < reach:
            push = AVOID_GAIN * (reach - dist) / dist
            ax, ay = ax + push * dx, ay + push * dy
    return (ax, ay)"#;

const AVOID_V2: &str = r#"import math

CLEARANCE_MARGIN = 0.1
AVOID_GAIN = 0.8


def Avoid_collisions():
    x, y = get_self_position()
    own = get_self_radius()
    ax, ay = 0.0, 0.0
    nearby = get_surrounding_robots_info() + get_surrounding_obstacles_info()
    for other in nearby:
        ox, oy = other["position"]
        dx, dy = x - ox, y - oy
        dist = math.hypot(dx, dy)
        reach = own + other["radius"] + CLEARANCE_MARGIN
        if 1e-9 < dist < reach:
            push = AVOID_GAIN * (reach - dist) / dist
            ax, ay = ax + push * dx, ay + push * dy
    return (ax, ay)"#;

const LIMIT: &str = r#"import math

MAX_SPEED = 0.5
BOUNDARY_MARGIN = 0.1


def Limit_velocity(vx, vy):
    x, y = get_self_position()
    x_min, y_min, x_max, y_max = get_arena_bounds()
    if (x <= x_min + BOUNDARY_MARGIN and vx < 0) or (x >= x_max - BOUNDARY_MARGIN and vx > 0):
        vx = 0.0
    if (y <= y_min + BOUNDARY_MARGIN and vy < 0) or (y >= y_max - BOUNDARY_MARGIN and vy > 0):
        vy = 0.0
    speed = math.hypot(vx, vy)
    if speed > MAX_SPEED:
        vx, vy = vx * MAX_SPEED / speed, vy * MAX_SPEED / speed
    return (vx, vy)"#;

const UPDATE: &str = r#"GAIN = 1.5


def Update_velocity():
    tx, ty = Compute_target_position()
    x, y = get_self_position()
    ax, ay = Avoid_collisions()
    vx = GAIN * (tx - x) + ax
    vy = GAIN * (ty - y) + ay
    set_velocity(Limit_velocity(vx, vy))"#;

pub const RADIUS_FEEDBACK: &str = "The circle is too wide; use a radius of 0.8 m instead of 1 m.";

fn first_written_body(name: &str) -> String {
    match name {
        "Allocate_initial_angles" => ALLOCATE.into(),
        "Get_prey_position" => GET_PREY.into(),
        "Compute_target_position" => compute_target("1.0"),
        "Avoid_collisions" => AVOID_V1.into(),
        "Limit_velocity" => LIMIT.into(),
        "Update_velocity" => UPDATE.into(),
        other => panic!("no body for {other}"),
    }
}

fn json(reply: &str, body: &str) -> String {
    format!("{reply}\n\n```json\n{body}\n```\n")
}

fn python(reply: &str, body: &str) -> String {
    format!("{reply}\n\n```python\n{body}\n```\n")
}

/// The text between the first pair of backticks after `marker`.
fn quoted_after<'a>(text: &'a str, marker: &str) -> &'a str {
    let rest = &text[text.find(marker).unwrap_or_else(|| panic!("no {marker:?} in prompt")) + marker.len()..];
    let start = rest.find('`').expect("opening backtick") + 1;
    let len = rest[start..].find('`').expect("closing backtick");
    &rest[start..start + len]
}

/// Plays a cooperative model on the encircling task: answers each agent
/// role, asks for one revision of `Avoid_collisions` (the first version
/// ignores obstacles) and moves the radius to 0.8 m when told to.
pub struct EncirclingModel;

impl EncirclingModel {
    pub fn answer(turns: &[ChatTurn]) -> String {
        let system = &turns.iter().find(|t| t.role == Role::System).expect("system turn").content;
        let user = &turns.iter().rev().find(|t| t.role == Role::User).expect("user turn").content;
        let agent = [
            Agent::ConstraintAnalyst,
            Agent::SkillDesigner,
            Agent::GraphBuilder,
            Agent::CodeWriter,
            Agent::CodeReviewer,
            Agent::FeedbackAnalyst,
            Agent::Critic,
        ]
        .into_iter()
        .find(|a| system.starts_with(a.role()))
        .expect("known role");
        match agent {
            Agent::ConstraintAnalyst => json("The policy has to satisfy these constraints.", CONSTRAINTS),
            Agent::SkillDesigner => json("One global allocator and five local skills.", SKILLS),
            Agent::GraphBuilder => json("Call structure:", GRAPH),
            Agent::CodeWriter if user.contains("must change") => {
                let name = quoted_after(user, "skill ");
                assert_eq!(name, "Compute_target_position", "only the radius is ever revised");
                python("Radius reduced as requested.", &compute_target("0.8"))
            }
            Agent::CodeWriter => {
                let name = quoted_after(user, "function ");
                python(&format!("Here is `{name}`."), &first_written_body(name))
            }
            Agent::CodeReviewer => {
                let name = quoted_after(user, "skill ");
                if name == "Avoid_collisions" && !user.contains("get_surrounding_obstacles_info") {
                    format!(
                        "{}\n{}",
                        json("Obstacles are not avoided, only robots.", r#"{"verdict": "revise"}"#),
                        python("Corrected:", AVOID_V2)
                    )
                } else {
                    json("Looks correct.", r#"{"verdict": "pass"}"#)
                }
            }
            Agent::FeedbackAnalyst => json("The radius lives in one skill.", r#"["Compute_target_position"]"#),
            Agent::Critic => json(
                "The robots surround the prey.",
                r#"{"verdict": "success", "feedback": "evenly spaced ring around the prey"}"#,
            ),
        }
    }
}

impl Backend for EncirclingModel {
    fn complete(&self, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        Ok(Completion {
            text: Self::answer(turns),
            usage: Usage::default(),
        })
    }
}

/// Fails every call the same way.
pub struct AlwaysFailing(pub GatewayError);

impl Backend for AlwaysFailing {
    fn complete(&self, _: &[ChatTurn]) -> Result<Completion, GatewayError> {
        Err(self.0.clone())
    }
}

/// Answers every call with the same text.
pub struct Constant(pub &'static str);

impl Backend for Constant {
    fn complete(&self, _: &[ChatTurn]) -> Result<Completion, GatewayError> {
        Ok(Completion {
            text: self.0.into(),
            usage: Usage::default(),
        })
    }
}
