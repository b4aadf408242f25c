//! Centralized Petri-net oracle for differential testing.
//!
//! The distributed engine is checked against a single-process reference:
//! a marked net with counter places and guards, built from the same
//! process definition. Multi-instance regions use the classic pre/post
//! structure — a spawn-budget place, a running counter (p2) and a
//! completed counter (p5), with the merge transition gated on "nothing
//! running, budget exhausted, additions closed". Interleaved routing uses
//! a capacity-one place (p3) consumed for the span of each bracketed task.
//!
//! Projecting a distributed trace onto transition names and replaying them
//! here answers "was that execution a legal firing sequence".

use std::collections::BTreeMap;

use thiserror::Error;

use crate::workflow::{JoinKind, ProcessDefinition, SplitKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("definition not translatable: {0}")]
    Untranslatable(String),
    #[error("transition {0} unknown")]
    UnknownTransition(String),
    #[error("transition {0} not enabled: {1}")]
    NotEnabled(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    None,
    /// All listed places must hold zero tokens.
    PlacesEmpty(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub name: String,
    pub consume: Vec<(String, u64)>,
    pub produce: Vec<(String, u64)>,
    pub guard: Guard,
}

/// A marked counter net.
#[derive(Debug, Clone)]
pub struct OracleNet {
    pub marking: BTreeMap<String, u64>,
    pub transitions: Vec<Transition>,
}

impl OracleNet {
    pub fn tokens(&self, place: &str) -> u64 {
        self.marking.get(place).copied().unwrap_or(0)
    }

    fn transition(&self, name: &str) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.name == name)
    }

    pub fn enabled(&self, name: &str) -> Result<(), OracleError> {
        let t = self
            .transition(name)
            .ok_or_else(|| OracleError::UnknownTransition(name.to_string()))?;
        for (place, count) in &t.consume {
            if self.tokens(place) < *count {
                return Err(OracleError::NotEnabled(
                    name.to_string(),
                    format!("needs {count} in {place}, has {}", self.tokens(place)),
                ));
            }
        }
        if let Guard::PlacesEmpty(places) = &t.guard {
            for p in places {
                if self.tokens(p) != 0 {
                    return Err(OracleError::NotEnabled(
                        name.to_string(),
                        format!("guard requires {p} empty, has {}", self.tokens(p)),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn fire(&mut self, name: &str) -> Result<(), OracleError> {
        self.enabled(name)?;
        let t = self.transition(name).expect("checked").clone();
        for (place, count) in &t.consume {
            *self.marking.get_mut(place).expect("consume place") -= count;
        }
        for (place, count) in &t.produce {
            *self.marking.entry(place.clone()).or_insert(0) += count;
        }
        Ok(())
    }

    /// All transitions currently enabled.
    pub fn enabled_set(&self) -> Vec<String> {
        self.transitions
            .iter()
            .filter(|t| self.enabled(&t.name).is_ok())
            .map(|t| t.name.clone())
            .collect()
    }

    /// Fire a whole sequence, failing on the first illegal step.
    pub fn replay(&mut self, sequence: &[String]) -> Result<(), OracleError> {
        for step in sequence {
            self.fire(step)?;
        }
        Ok(())
    }
}

/// Transition-name vocabulary shared by the oracle and the projection of
/// distributed traces.
pub fn t_start(task: &str, instance: u32) -> String {
    format!("start:{task}:{instance}")
}
pub fn t_complete(task: &str, instance: u32) -> String {
    format!("complete:{task}:{instance}")
}
pub fn t_spawn(task: &str) -> String {
    format!("spawn:{task}")
}
pub fn t_add(task: &str) -> String {
    format!("add:{task}")
}
pub fn t_close(task: &str) -> String {
    format!("close:{task}")
}
pub fn t_merge(task: &str) -> String {
    format!("merge:{task}")
}

/// Build the oracle net for a definition. `max_instances` bounds the
/// per-task instance index space used in transition names.
pub fn build(def: &ProcessDefinition, max_instances: u32) -> Result<OracleNet, OracleError> {
    let starts = def.start_tasks();
    let [start] = starts.as_slice() else {
        return Err(OracleError::Untranslatable(format!(
            "{} start tasks",
            starts.len()
        )));
    };

    let mut marking: BTreeMap<String, u64> = BTreeMap::new();
    let mut transitions: Vec<Transition> = Vec::new();

    let edge_place = |a: &str, b: &str| format!("edge:{a}:{b}");
    let ready_place = |t: &str| format!("ready:{t}");
    let running_place = |t: &str, i: u32| format!("running:{t}:{i}");
    let mutex_place = |set: &str| format!("p3:{set}");

    marking.insert(ready_place(start), 1);
    for (set, _) in &def.mutex_sets {
        marking.insert(mutex_place(set), 1); // capacity-one semaphore
    }

    let mutex_of = |task: &str| -> Vec<String> {
        def.mutex_sets
            .iter()
            .filter(|(_, tasks)| tasks.iter().any(|t| t == task))
            .map(|(set, _)| mutex_place(set))
            .collect()
    };

    for task in &def.tasks {
        let id = task.id.as_str();
        let preds = def.predecessors(id);
        let succs = def.successors(id);

        // how the task becomes ready: join over incoming edge places
        match (task.join, preds.len()) {
            (_, 0) => {} // start task: ready token pre-marked
            (JoinKind::And, _) => {
                transitions.push(Transition {
                    name: format!("join:{id}"),
                    consume: preds.iter().map(|p| (edge_place(p, id), 1)).collect(),
                    produce: vec![(ready_place(id), 1)],
                    guard: Guard::None,
                });
            }
            (JoinKind::Xor | JoinKind::None, _) => {
                for p in &preds {
                    transitions.push(Transition {
                        name: format!("join:{id}:via:{p}"),
                        consume: vec![(edge_place(p, id), 1)],
                        produce: vec![(ready_place(id), 1)],
                        guard: Guard::None,
                    });
                }
            }
        }

        // completion output per split semantics
        let completion_produce = |transitions: &mut Vec<Transition>,
                                  consume: Vec<(String, u64)>,
                                  name_base: String,
                                  extra_produce: Vec<(String, u64)>| {
            match (task.split, succs.len()) {
                (_, 0) => {
                    let mut produce = extra_produce.clone();
                    produce.push((format!("done:{id}"), 1));
                    transitions.push(Transition {
                        name: name_base,
                        consume,
                        produce,
                        guard: Guard::None,
                    });
                }
                (SplitKind::And, _) | (SplitKind::None, 1) => {
                    let mut produce = extra_produce.clone();
                    for s in &succs {
                        produce.push((edge_place(id, s), 1));
                    }
                    transitions.push(Transition {
                        name: name_base,
                        consume,
                        produce,
                        guard: Guard::None,
                    });
                }
                (SplitKind::Xor, _) | (SplitKind::None, _) => {
                    // one variant per chosen branch; replay projects the
                    // branch from which successor actually ran
                    for s in &succs {
                        let mut produce = extra_produce.clone();
                        produce.push((edge_place(id, s), 1));
                        transitions.push(Transition {
                            name: format!("{name_base}:to:{s}"),
                            consume: consume.clone(),
                            produce,
                            guard: Guard::None,
                        });
                    }
                }
            }
        };

        match &task.multi_instance {
            None => {
                let mutexes = mutex_of(id);
                let mut consume = vec![(ready_place(id), 1)];
                for m in &mutexes {
                    consume.push((m.clone(), 1));
                }
                transitions.push(Transition {
                    name: t_start(id, 0),
                    consume,
                    produce: vec![(running_place(id, 0), 1)],
                    guard: Guard::None,
                });
                let mut consume = vec![(running_place(id, 0), 1)];
                let mut extra = Vec::new();
                for m in &mutexes {
                    extra.push((m.clone(), 1));
                }
                let _ = &mut consume;
                completion_produce(
                    &mut transitions,
                    consume,
                    t_complete(id, 0),
                    extra,
                );
            }
            Some(mi) => {
                // pre region: entering the task opens the region and funds
                // the initial spawn budget (p1 counts total created)
                let open = format!("open:{id}");
                let budget = format!("budget:{id}");
                let allowance = format!("allowance:{id}");
                let p1 = format!("p1:{id}");
                let p2 = format!("p2:{id}");
                let p5 = format!("p5:{id}");
                // dynamic additions are bounded by the declared max or by
                // the instance-name space, keeping exploration finite
                let add_allowance = mi
                    .max
                    .unwrap_or(max_instances)
                    .min(max_instances)
                    .saturating_sub(mi.min);
                transitions.push(Transition {
                    name: format!("enter:{id}"),
                    consume: vec![(ready_place(id), 1)],
                    produce: vec![
                        (open.clone(), 1),
                        (budget.clone(), u64::from(mi.min)),
                        (allowance.clone(), u64::from(add_allowance)),
                        (format!("premerge:{id}"), 1),
                    ],
                    guard: Guard::None,
                });
                transitions.push(Transition {
                    name: t_spawn(id),
                    consume: vec![(budget.clone(), 1)],
                    produce: vec![(p1.clone(), 1), (p2.clone(), 1)],
                    guard: Guard::None,
                });
                if mi.dynamic {
                    // additions only while the region is open
                    transitions.push(Transition {
                        name: t_add(id),
                        consume: vec![(open.clone(), 1), (allowance.clone(), 1)],
                        produce: vec![(open.clone(), 1), (budget.clone(), 1)],
                        guard: Guard::None,
                    });
                }
                transitions.push(Transition {
                    name: t_close(id),
                    consume: vec![(open.clone(), 1)],
                    produce: vec![],
                    guard: Guard::None,
                });
                // instances run between start and complete
                for i in 0..max_instances {
                    transitions.push(Transition {
                        name: t_start(id, i),
                        consume: vec![(p2.clone(), 1)],
                        produce: vec![(running_place(id, i), 1)],
                        guard: Guard::None,
                    });
                    transitions.push(Transition {
                        name: t_complete(id, i),
                        consume: vec![(running_place(id, i), 1)],
                        produce: vec![(p5.clone(), 1)],
                        guard: Guard::None,
                    });
                }
                // post region: merge only after the region closed, the
                // budget drained, and every spawned instance completed.
                // p5 tokens are swept so accounting balances.
                let mut running_like = vec![open.clone(), budget.clone(), p2.clone()];
                for i in 0..max_instances {
                    running_like.push(running_place(id, i));
                }
                completion_produce(
                    &mut transitions,
                    vec![(format!("premerge:{id}"), 1)],
                    t_merge(id),
                    vec![],
                );
                // patch the merge transitions we just added with the guard
                for t in transitions.iter_mut() {
                    if t.name.starts_with(&t_merge(id)) {
                        t.guard = Guard::PlacesEmpty(running_like.clone());
                    }
                }
                let _ = p1;
            }
        }
    }

    Ok(OracleNet { marking, transitions })
}

/// Exhaustively enumerate every distinct reachable marking (bounded by
/// `state_limit`), calling `check` on each and returning the number of
/// terminal (quiescent) markings.
pub fn explore(
    net: &OracleNet,
    state_limit: usize,
    check: &mut impl FnMut(&OracleNet),
) -> usize {
    use std::collections::BTreeSet;
    let mut visited: BTreeSet<Vec<(String, u64)>> = BTreeSet::new();
    let key = |n: &OracleNet| -> Vec<(String, u64)> {
        n.marking
            .iter()
            .filter(|(_, v)| **v > 0)
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    };
    let mut stack = vec![net.clone()];
    let mut terminals = 0;
    while let Some(current) = stack.pop() {
        if !visited.insert(key(&current)) {
            continue;
        }
        assert!(visited.len() <= state_limit, "state space exceeded {state_limit}");
        check(&current);
        let enabled = current.enabled_set();
        if enabled.is_empty() {
            terminals += 1;
            continue;
        }
        for name in enabled {
            let mut next = current.clone();
            next.fire(&name).expect("enabled");
            stack.push(next);
        }
    }
    terminals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::ProcessDefinition;

    fn sequence_def() -> ProcessDefinition {
        ProcessDefinition::from_toml_str(
            r#"
name = "seq"
[[task]]
id = "A"
role = "r"
[[task]]
id = "B"
role = "r"
[[edge]]
from = "A"
to = "B"
[[role]]
id = "r"
members = ["x"]
"#,
        )
        .unwrap()
    }

    #[test]
    fn sequence_fires_in_order() {
        let def = sequence_def();
        let mut net = build(&def, 1).unwrap();
        net.replay(&[
            t_start("A", 0),
            t_complete("A", 0),
            "join:B:via:A".to_string(),
            t_start("B", 0),
            t_complete("B", 0),
        ])
        .unwrap();
        assert_eq!(net.tokens("done:B"), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let def = sequence_def();
        let mut net = build(&def, 1).unwrap();
        let err = net.fire(&t_start("B", 0)).unwrap_err();
        assert!(matches!(err, OracleError::NotEnabled(..)));
        // B cannot even become ready before A completes
        let err = net.fire("join:B:via:A").unwrap_err();
        assert!(matches!(err, OracleError::NotEnabled(..)));
    }

    fn wcp17_def() -> ProcessDefinition {
        ProcessDefinition::from_toml_str(
            r#"
name = "wcp17"
[[task]]
id = "A"
role = "r"
split = "and"
[[task]]
id = "B"
role = "r"
[[task]]
id = "C"
role = "r"
[[task]]
id = "D"
role = "r"
join = "and"
[[edge]]
from = "A"
to = "B"
[[edge]]
from = "A"
to = "C"
[[edge]]
from = "B"
to = "D"
[[edge]]
from = "C"
to = "D"
[[role]]
id = "r"
members = ["x"]
[mutex_sets]
cs = ["B", "C"]
"#,
        )
        .unwrap()
    }

    /// Capacity-one p3: no reachable marking runs B and C together, and
    /// both interleavings exist.
    #[test]
    fn wcp17_mutex_place_excludes_overlap() {
        let def = wcp17_def();
        let net = build(&def, 1).unwrap();
        let mut saw_b_while_c_waits = false;
        let mut saw_c_while_b_waits = false;
        explore(&net, 100_000, &mut |net| {
            let b_running = net.tokens("running:B:0");
            let c_running = net.tokens("running:C:0");
            assert!(b_running + c_running <= 1, "B and C overlap");
            if b_running == 1 && net.tokens("edge:A:C") + net.tokens("ready:C") > 0 {
                saw_b_while_c_waits = true;
            }
            if c_running == 1 && net.tokens("edge:A:B") + net.tokens("ready:B") > 0 {
                saw_c_while_b_waits = true;
            }
        });
        assert!(saw_b_while_c_waits && saw_c_while_b_waits);
    }

    fn wcp15_def() -> ProcessDefinition {
        ProcessDefinition::from_toml_str(
            r#"
name = "wcp15"
[[task]]
id = "A"
role = "r"
[[task]]
id = "C"
role = "r"
[task.multi_instance]
min = 3
dynamic = true
[[task]]
id = "S"
role = "r"
[[edge]]
from = "A"
to = "C"
[[edge]]
from = "C"
to = "S"
[[role]]
id = "r"
members = ["x"]
"#,
        )
        .unwrap()
    }

    /// Exhaustive search over the 3+1-instance net: in every reachable
    /// marking the successor only ever runs after full post-region
    /// synchronization — no open region, no budget, nothing running.
    #[test]
    fn wcp15_synchronizes_before_successor() {
        let def = wcp15_def();
        let mut net = build(&def, 4).unwrap();
        // drive A and enter the region, allow one dynamic addition
        net.replay(&[
            t_start("A", 0),
            t_complete("A", 0),
            "join:C:via:A".to_string(),
            "enter:C".to_string(),
            t_add("C"),
        ])
        .unwrap();
        let mut terminal_with_s = 0;
        let terminals = explore(&net, 200_000, &mut |net| {
            let successor_live = net.tokens("edge:C:S")
                + net.tokens("ready:S")
                + net.tokens("running:S:0")
                + net.tokens("done:S");
            if successor_live > 0 {
                let unfinished = net.tokens("open:C")
                    + net.tokens("budget:C")
                    + net.tokens("p2:C")
                    + (0..4).map(|i| net.tokens(&format!("running:C:{i}"))).sum::<u64>();
                assert_eq!(unfinished, 0, "successor live while instances unfinished");
                assert_eq!(net.tokens("p5:C"), net.tokens("p1:C"), "merge lost instances");
            }
            if net.tokens("done:S") == 1 {
                terminal_with_s += 1;
            }
        });
        assert!(terminals > 0);
        assert!(terminal_with_s > 0, "some path completes the case");
    }

    #[test]
    fn wcp15_merge_counts_every_instance() {
        let def = wcp15_def();
        let mut net = build(&def, 4).unwrap();
        net.replay(&[
            t_start("A", 0),
            t_complete("A", 0),
            "join:C:via:A".to_string(),
            "enter:C".to_string(),
            t_add("C"),
            t_spawn("C"),
            t_spawn("C"),
            t_spawn("C"),
            t_spawn("C"),
            t_close("C"),
            t_start("C", 0),
            t_complete("C", 0),
            t_start("C", 1),
            t_start("C", 2),
            t_complete("C", 2),
            t_start("C", 3),
            t_complete("C", 3),
        ])
        .unwrap();
        // one instance still running: merge blocked
        assert!(net.enabled(&t_merge("C")).is_err());
        net.fire(&t_complete("C", 1)).unwrap();
        net.fire(&t_merge("C")).unwrap();
        assert_eq!(net.tokens("p5:C"), 4);
        net.replay(&["join:S:via:C".to_string(), t_start("S", 0), t_complete("S", 0)])
            .unwrap();
    }

    #[test]
    fn untranslatable_definition_rejected() {
        let def = ProcessDefinition::from_toml_str(
            r#"
name = "two-starts"
[[task]]
id = "A"
role = "r"
[[task]]
id = "B"
role = "r"
[[role]]
id = "r"
members = ["x"]
"#,
        )
        .unwrap();
        assert!(matches!(build(&def, 1), Err(OracleError::Untranslatable(_))));
    }
}
