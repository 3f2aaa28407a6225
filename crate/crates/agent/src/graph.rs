//! Skill dependency graph: validation, layering and code-generation order.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use swarmgen_core::bundle::Scope;

use crate::model::SkillSpec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("skill {0} defined twice")]
    DuplicateSkill(String),
    #[error("skill {skill} depends on unknown skill {dependency}")]
    DanglingDependency { skill: String, dependency: String },
    #[error("local skill {skill} depends on global skill {dependency}")]
    ScopeViolation { skill: String, dependency: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
}

/// Skills keyed by name. An edge `u -> v` means `v` calls `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillGraph {
    skills: BTreeMap<String, SkillSpec>,
    layers: Vec<Vec<String>>,
}

impl SkillGraph {
    /// Checks names, edges and scopes, rejects cycles and computes layers:
    /// a skill with no dependencies is in layer 0, any other one layer above
    /// its highest dependency.
    pub fn new(skills: Vec<SkillSpec>) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for s in skills {
            if map.contains_key(&s.name) {
                return Err(GraphError::DuplicateSkill(s.name));
            }
            map.insert(s.name.clone(), s);
        }
        for s in map.values() {
            for d in &s.dependencies {
                let Some(dep) = map.get(d) else {
                    return Err(GraphError::DanglingDependency {
                        skill: s.name.clone(),
                        dependency: d.clone(),
                    });
                };
                if s.scope == Scope::Local && dep.scope == Scope::Global {
                    return Err(GraphError::ScopeViolation {
                        skill: s.name.clone(),
                        dependency: d.clone(),
                    });
                }
            }
        }
        if let Some(cycle) = find_cycle(&map) {
            return Err(GraphError::CycleDetected(cycle));
        }
        let mut level: BTreeMap<&str, usize> = BTreeMap::new();
        for name in topological(&map) {
            let l = map[&name]
                .dependencies
                .iter()
                .map(|d| level[d.as_str()] + 1)
                .max()
                .unwrap_or(0);
            level.insert(map.get_key_value(&name).expect("known").0, l);
        }
        let mut layers = vec![Vec::new(); level.values().max().map_or(0, |m| m + 1)];
        for (name, l) in level {
            layers[l].push(name.to_string());
        }
        Ok(SkillGraph { skills: map, layers })
    }

    pub fn layers(&self) -> &[Vec<String>] {
        &self.layers
    }

    pub fn layer_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.iter().any(|n| n == name))
    }

    /// `(dependency, dependent)` pairs.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.skills
            .values()
            .flat_map(|s| s.dependencies.iter().map(|d| (d.clone(), s.name.clone())))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&SkillSpec> {
        self.skills.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut SkillSpec> {
        self.skills.get_mut(name)
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillSpec> {
        self.skills.values()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// Skills that call `name`.
    pub fn dependents(&self, name: &str) -> Vec<&str> {
        self.skills
            .values()
            .filter(|s| s.dependencies.iter().any(|d| d == name))
            .map(|s| s.name.as_str())
            .collect()
    }

    /// `name` and everything it calls, directly or not, sorted by name.
    pub fn closure(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![name.to_string()];
        while let Some(n) = stack.pop() {
            if out.insert(n.clone()) {
                if let Some(s) = self.skills.get(&n) {
                    stack.extend(s.dependencies.iter().cloned());
                }
            }
        }
        out
    }

    /// Hash of a skill's signature and of everything below it, bodies
    /// excluded: equal keys mean the skill can be reused as written.
    pub fn reuse_key(&self, name: &str) -> String {
        let mut h = Sha256::new();
        for n in self.closure(name) {
            let s = &self.skills[&n];
            let mut deps = s.dependencies.clone();
            deps.sort();
            let mut constraints = s.constraint_ids.clone();
            constraints.sort();
            h.update(format!(
                "{}\n{}\n{}\n{}\n{}\n\n",
                s.name,
                s.scope,
                s.description,
                deps.join(","),
                constraints.join(",")
            ));
        }
        hex::encode(h.finalize())
    }
}

/// Kahn's algorithm taking the alphabetically first ready skill each time.
fn topological(map: &BTreeMap<String, SkillSpec>) -> Vec<String> {
    let mut pending: BTreeMap<&str, usize> = map
        .values()
        .map(|s| (s.name.as_str(), s.dependencies.iter().collect::<BTreeSet<_>>().len()))
        .collect();
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(map.len());
    while let Some(next) = ready.pop_first() {
        pending.remove(next);
        order.push(next.to_string());
        for s in map.values() {
            if s.dependencies.iter().any(|d| d == next) {
                // Counts are over distinct dependencies, so one decrement per
                // dependent regardless of repeats.
                let n = pending.get_mut(s.name.as_str()).expect("pending dependent");
                *n -= 1;
                if *n == 0 {
                    ready.insert(s.name.as_str());
                }
            }
        }
    }
    order
}

fn find_cycle(map: &BTreeMap<String, SkillSpec>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        map: &'a BTreeMap<String, SkillSpec>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        match marks.get(name) {
            Some(Mark::Done) => return None,
            Some(Mark::Open) => {
                let start = path.iter().position(|n| *n == name).expect("open node on path");
                let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                cycle.push(name.to_string());
                return Some(cycle);
            }
            None => {}
        }
        marks.insert(name, Mark::Open);
        path.push(name);
        for d in &map[name].dependencies {
            if let Some(c) = visit(d, map, marks, path) {
                return Some(c);
            }
        }
        path.pop();
        marks.insert(name, Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for name in map.keys() {
        if let Some(c) = visit(name, map, &mut marks, &mut Vec::new()) {
            return Some(c);
        }
    }
    None
}

/// Dependencies strictly before dependents; ties broken by name.
pub fn codegen_order(graph: &SkillGraph) -> Vec<String> {
    topological(&graph.skills)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn local(name: &str, deps: &[&str]) -> SkillSpec {
        SkillSpec::new(name, Scope::Local).depends_on(deps)
    }

    #[test]
    fn two_layers() {
        let g = SkillGraph::new(vec![local("B", &["A"]), local("A", &[])]).unwrap();
        assert_eq!(g.layers(), [vec!["A".to_string()], vec!["B".to_string()]]);
        assert_eq!(g.edges(), [("A".to_string(), "B".to_string())]);
    }

    #[test]
    fn cycles_are_rejected() {
        let err = SkillGraph::new(vec![local("A", &["B"]), local("B", &["A"])]).unwrap_err();
        assert_eq!(err, GraphError::CycleDetected(vec!["A".into(), "B".into(), "A".into()]));
        assert!(matches!(
            SkillGraph::new(vec![local("A", &["A"])]),
            Err(GraphError::CycleDetected(_))
        ));
    }

    #[test]
    fn dangling_duplicate_and_scope_errors() {
        assert_eq!(
            SkillGraph::new(vec![local("A", &["Z"])]).unwrap_err(),
            GraphError::DanglingDependency { skill: "A".into(), dependency: "Z".into() }
        );
        assert!(matches!(
            SkillGraph::new(vec![local("A", &[]), local("A", &[])]),
            Err(GraphError::DuplicateSkill(_))
        ));
        let global = SkillSpec::new("G", Scope::Global);
        assert!(matches!(
            SkillGraph::new(vec![global.clone(), local("L", &["G"])]),
            Err(GraphError::ScopeViolation { .. })
        ));
        // A global allocator may use local helpers.
        assert!(SkillGraph::new(vec![global.depends_on(&["L"]), local("L", &[])]).is_ok());
    }

    #[test]
    fn order_examples() {
        let chain = SkillGraph::new(vec![local("C", &["B"]), local("B", &["A"]), local("A", &[])]).unwrap();
        assert_eq!(codegen_order(&chain), ["A", "B", "C"]);
        let free = SkillGraph::new(vec![local("B", &[]), local("A", &[])]).unwrap();
        assert_eq!(codegen_order(&free), ["A", "B"]);
        let repeated = SkillGraph::new(vec![local("B", &["A", "A"]), local("A", &[])]).unwrap();
        assert_eq!(codegen_order(&repeated), ["A", "B"]);
    }

    #[test]
    fn reuse_key_tracks_subtree_signatures() {
        let base = vec![local("A", &[]), local("B", &["A"]), local("C", &[])];
        let g = SkillGraph::new(base.clone()).unwrap();
        let mut changed = base.clone();
        changed[0].description = "different".into();
        let h = SkillGraph::new(changed).unwrap();
        assert_ne!(g.reuse_key("A"), h.reuse_key("A"));
        assert_ne!(g.reuse_key("B"), h.reuse_key("B"));
        assert_eq!(g.reuse_key("C"), h.reuse_key("C"));
        let mut bodies = base;
        bodies[0].body = Some("def A(): pass".into());
        assert_eq!(g.reuse_key("B"), SkillGraph::new(bodies).unwrap().reuse_key("B"));
    }

    /// Random DAGs: skill i may depend only on skills with a lower index.
    fn dag() -> impl Strategy<Value = Vec<SkillSpec>> {
        (1usize..10)
            .prop_flat_map(|n| prop::collection::vec(prop::collection::vec(any::<prop::sample::Index>(), 0..4), n))
            .prop_map(|deps| {
                let names: Vec<String> = (0..deps.len()).map(|i| format!("s{:02}", (i * 7) % 100)).collect();
                deps.iter()
                    .enumerate()
                    .map(|(i, ds)| {
                        let d: BTreeSet<String> = if i == 0 {
                            BTreeSet::new()
                        } else {
                            ds.iter().map(|x| names[x.index(i)].clone()).collect()
                        };
                        SkillSpec {
                            dependencies: d.into_iter().collect(),
                            ..SkillSpec::new(names[i].clone(), Scope::Local)
                        }
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn order_and_layers_respect_dependencies(skills in dag()) {
            let g = SkillGraph::new(skills.clone()).unwrap();
            let order = codegen_order(&g);
            prop_assert_eq!(order.len(), skills.len());
            let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            for (u, v) in g.edges() {
                prop_assert!(pos[u.as_str()] < pos[v.as_str()]);
                prop_assert!(g.layer_of(&u).unwrap() < g.layer_of(&v).unwrap());
            }
            for layer in g.layers() {
                prop_assert!(layer.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn back_edge_is_a_cycle(skills in dag(), pick in any::<prop::sample::Index>()) {
            let with_deps: Vec<usize> = (0..skills.len()).filter(|&i| !skills[i].dependencies.is_empty()).collect();
            prop_assume!(!with_deps.is_empty());
            let mut skills = skills;
            let i = with_deps[pick.index(with_deps.len())];
            let target = skills[i].dependencies[0].clone();
            let me = skills[i].name.clone();
            skills.iter_mut().find(|s| s.name == target).unwrap().dependencies.push(me);
            let is_cycle = matches!(SkillGraph::new(skills), Err(GraphError::CycleDetected(_)));
            prop_assert!(is_cycle);
        }
    }
}
