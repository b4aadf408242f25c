//! Process definitions: the declarative workflow graph, its document
//! format, structural validation, and the scope-key provisioning plan.
//!
//! A definition lists tasks (with split/join semantics, roles, optional
//! multi-instance and team-acceptance settings), directed edges, data
//! elements with visibility scopes and transfer modes, role bindings, and
//! named mutual-exclusion sets. Validation checks the graph shape plus the
//! cross-aspect rule that every role touching a sensitive element holds
//! that element's scope key.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DefError {
    #[error("definition parse error: {0}")]
    Parse(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitKind {
    #[default]
    None,
    And,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JoinKind {
    #[default]
    None,
    And,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiInstanceSpec {
    /// Instances spawned when the task fires.
    pub min: u32,
    /// Upper bound; `None` means unbounded (dynamic growth).
    pub max: Option<u32>,
    /// More instances may be added while others run.
    pub dynamic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskNode {
    pub id: String,
    pub split: SplitKind,
    pub join: JoinKind,
    pub multi_instance: Option<MultiInstanceSpec>,
    pub block: Option<String>,
    pub role: String,
    /// Threshold team acceptance: (k, l) — k shares allocate the item.
    pub team_policy: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataScope {
    /// WPD-1: confined to one task.
    Task,
    /// WPD-2: all components of a sub-process (block).
    Block,
    /// WPD-3: an explicit set of tasks.
    ScopeSet,
    /// WPD-4: parallel instances of a multi-instance task (and block tasks
    /// sharing the implementation).
    MultiInstance,
    /// WPD-5: every task in the case.
    Case,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    CopyByValue,
    MoveByValue,
    ByReference,
    ByReferenceLocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataElement {
    pub name: String,
    pub scope: DataScope,
    /// Anchor of the scope: the task (Task/MultiInstance), the block
    /// (Block), or the explicit task list (ScopeSet). Unused for Case.
    pub scope_anchor: Vec<String>,
    pub transfer: TransferMode,
    pub sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleBinding {
    pub role: String,
    pub members: Vec<String>,
    /// Scope keys explicitly provisioned to this role; `None` means
    /// "derive automatically" (always consistent). An explicit list lets
    /// a model understate provisioning, which validation must catch.
    pub provisioned_keys: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessDefinition {
    pub name: String,
    pub tasks: Vec<TaskNode>,
    pub edges: Vec<(String, String)>,
    pub data: Vec<DataElement>,
    pub roles: Vec<RoleBinding>,
    pub mutex_sets: BTreeMap<String, Vec<String>>,
    pub blocks: BTreeMap<String, Vec<String>>,
}

// ---- document format ---------------------------------------------------------

#[derive(Deserialize)]
struct TaskDoc {
    id: String,
    role: String,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    join: Option<String>,
    #[serde(default)]
    block: Option<String>,
    #[serde(default)]
    multi_instance: Option<MiDoc>,
    #[serde(default)]
    team_policy: Option<TeamDoc>,
}

#[derive(Deserialize)]
struct MiDoc {
    min: u32,
    #[serde(default)]
    max: Option<u32>,
    #[serde(default)]
    dynamic: bool,
}

#[derive(Deserialize)]
struct TeamDoc {
    threshold: u32,
    signers: u32,
}

#[derive(Deserialize)]
struct EdgeDoc {
    from: String,
    to: String,
}

#[derive(Deserialize)]
struct DataDoc {
    name: String,
    scope: String,
    #[serde(default)]
    anchor: Vec<String>,
    #[serde(default = "default_transfer")]
    transfer: String,
    #[serde(default)]
    sensitive: bool,
}

fn default_transfer() -> String {
    "copy".to_string()
}

#[derive(Deserialize)]
struct RoleDoc {
    id: String,
    members: Vec<String>,
    #[serde(default)]
    provisioned: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct DefDoc {
    name: String,
    #[serde(default)]
    task: Vec<TaskDoc>,
    #[serde(default)]
    edge: Vec<EdgeDoc>,
    #[serde(default)]
    data: Vec<DataDoc>,
    #[serde(default)]
    role: Vec<RoleDoc>,
    #[serde(default)]
    mutex_sets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    blocks: BTreeMap<String, Vec<String>>,
}

impl ProcessDefinition {
    pub fn from_toml_str(text: &str) -> Result<Self, DefError> {
        let doc: DefDoc = toml::from_str(text).map_err(|e| DefError::Parse(e.to_string()))?;
        let parse_split = |s: &Option<String>| match s.as_deref() {
            None | Some("none") => Ok(SplitKind::None),
            Some("and") => Ok(SplitKind::And),
            Some("xor") => Ok(SplitKind::Xor),
            Some(other) => Err(DefError::Parse(format!("bad split {other}"))),
        };
        let parse_join = |s: &Option<String>| match s.as_deref() {
            None | Some("none") => Ok(JoinKind::None),
            Some("and") => Ok(JoinKind::And),
            Some("xor") => Ok(JoinKind::Xor),
            Some(other) => Err(DefError::Parse(format!("bad join {other}"))),
        };
        let tasks = doc
            .task
            .iter()
            .map(|t| {
                Ok(TaskNode {
                    id: t.id.clone(),
                    split: parse_split(&t.split)?,
                    join: parse_join(&t.join)?,
                    multi_instance: t.multi_instance.as_ref().map(|m| MultiInstanceSpec {
                        min: m.min.max(1),
                        max: m.max,
                        dynamic: m.dynamic,
                    }),
                    block: t.block.clone(),
                    role: t.role.clone(),
                    team_policy: t.team_policy.as_ref().map(|p| (p.threshold, p.signers)),
                })
            })
            .collect::<Result<Vec<_>, DefError>>()?;
        let data = doc
            .data
            .iter()
            .map(|d| {
                let scope = match d.scope.as_str() {
                    "task" => DataScope::Task,
                    "block" => DataScope::Block,
                    "set" => DataScope::ScopeSet,
                    "mi" => DataScope::MultiInstance,
                    "case" => DataScope::Case,
                    other => return Err(DefError::Parse(format!("bad scope {other}"))),
                };
                let transfer = match d.transfer.as_str() {
                    "copy" => TransferMode::CopyByValue,
                    "move" => TransferMode::MoveByValue,
                    "ref" => TransferMode::ByReference,
                    "ref-locked" => TransferMode::ByReferenceLocked,
                    other => return Err(DefError::Parse(format!("bad transfer {other}"))),
                };
                Ok(DataElement {
                    name: d.name.clone(),
                    scope,
                    scope_anchor: d.anchor.clone(),
                    transfer,
                    sensitive: d.sensitive,
                })
            })
            .collect::<Result<Vec<_>, DefError>>()?;
        Ok(ProcessDefinition {
            name: doc.name,
            tasks,
            edges: doc.edge.into_iter().map(|e| (e.from, e.to)).collect(),
            data,
            roles: doc
                .role
                .into_iter()
                .map(|r| RoleBinding {
                    role: r.id,
                    members: r.members,
                    provisioned_keys: r.provisioned,
                })
                .collect(),
            mutex_sets: doc.mutex_sets,
            blocks: doc.blocks,
        })
    }

    pub fn task(&self, id: &str) -> Option<&TaskNode> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn role(&self, id: &str) -> Option<&RoleBinding> {
        self.roles.iter().find(|r| r.role == id)
    }

    pub fn predecessors(&self, task: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, to)| to == task)
            .map(|(from, _)| from.as_str())
            .collect()
    }

    pub fn successors(&self, task: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(from, _)| from == task)
            .map(|(_, to)| to.as_str())
            .collect()
    }

    pub fn start_tasks(&self) -> Vec<&str> {
        self.tasks
            .iter()
            .filter(|t| self.predecessors(&t.id).is_empty())
            .map(|t| t.id.as_str())
            .collect()
    }

    pub fn end_tasks(&self) -> Vec<&str> {
        self.tasks
            .iter()
            .filter(|t| self.successors(&t.id).is_empty())
            .map(|t| t.id.as_str())
            .collect()
    }

    /// Every distinct participant mentioned by any role.
    pub fn participants(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        for r in &self.roles {
            out.extend(r.members.iter().cloned());
        }
        out.into_iter().collect()
    }

    /// The member set of a data element's scope, per its visibility class.
    pub fn scope_members(&self, element: &DataElement) -> BTreeSet<String> {
        let members_of_tasks = |tasks: &[&TaskNode]| -> BTreeSet<String> {
            tasks
                .iter()
                .filter_map(|t| self.role(&t.role))
                .flat_map(|r| r.members.iter().cloned())
                .collect()
        };
        match element.scope {
            DataScope::Task => {
                let tasks: Vec<&TaskNode> = element
                    .scope_anchor
                    .iter()
                    .filter_map(|id| self.task(id))
                    .collect();
                members_of_tasks(&tasks)
            }
            DataScope::Block => {
                let task_ids: Vec<String> = element
                    .scope_anchor
                    .iter()
                    .filter_map(|b| self.blocks.get(b))
                    .flatten()
                    .cloned()
                    .collect();
                let tasks: Vec<&TaskNode> =
                    task_ids.iter().filter_map(|id| self.task(id)).collect();
                members_of_tasks(&tasks)
            }
            DataScope::ScopeSet => {
                let tasks: Vec<&TaskNode> = element
                    .scope_anchor
                    .iter()
                    .filter_map(|id| self.task(id))
                    .collect();
                members_of_tasks(&tasks)
            }
            DataScope::MultiInstance => {
                // all performers of the instance task plus block tasks
                // sharing the same sub-process implementation
                let mut tasks: Vec<&TaskNode> = element
                    .scope_anchor
                    .iter()
                    .filter_map(|id| self.task(id))
                    .collect();
                let shared_blocks: BTreeSet<&String> =
                    tasks.iter().filter_map(|t| t.block.as_ref()).collect();
                for t in &self.tasks {
                    if let Some(b) = &t.block {
                        if shared_blocks.contains(b) && !tasks.iter().any(|x| x.id == t.id) {
                            tasks.push(t);
                        }
                    }
                }
                members_of_tasks(&tasks)
            }
            DataScope::Case => self.participants().into_iter().collect(),
        }
    }

    /// The scope-key provisioning plan: one key session per data element,
    /// holding exactly the scope's member set.
    pub fn scope_key_plan(&self) -> Result<Vec<ScopeKeyPlan>, DefError> {
        let mut out = Vec::new();
        for element in &self.data {
            let members = self.scope_members(element);
            if members.is_empty() {
                return Err(DefError::Parse(format!(
                    "scope of element {} has no members",
                    element.name
                )));
            }
            out.push(ScopeKeyPlan {
                scope_id: format!("scope/{}", element.name),
                element: element.name.clone(),
                members: members.into_iter().collect(),
                sensitive: element.sensitive,
            });
        }
        Ok(out)
    }

    /// Tasks whose performers read `element` (every task in the scope).
    pub fn tasks_in_scope(&self, element: &DataElement) -> BTreeSet<String> {
        match element.scope {
            DataScope::Task | DataScope::ScopeSet | DataScope::MultiInstance => {
                element.scope_anchor.iter().cloned().collect()
            }
            DataScope::Block => element
                .scope_anchor
                .iter()
                .filter_map(|b| self.blocks.get(b))
                .flatten()
                .cloned()
                .collect(),
            DataScope::Case => self.tasks.iter().map(|t| t.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeKeyPlan {
    pub scope_id: String,
    pub element: String,
    pub members: Vec<String>,
    pub sensitive: bool,
}

// ---- validation ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoUniqueStart(usize),
    NoUniqueEnd(usize),
    Unreachable(String),
    DanglingEdge(String, String),
    UnknownRole { task: String, role: String },
    EmptyRole(String),
    UnknownMutexTask { set: String, task: String },
    UnknownScopeAnchor { element: String, anchor: String },
    /// Cross-aspect inconsistency: a role performs a task reading a
    /// sensitive element but was not provisioned the scope key.
    MissingScopeKey { task: String, element: String, role: String },
    BadMultiInstance(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoUniqueStart(n) => write!(f, "expected one start task, found {n}"),
            Violation::NoUniqueEnd(n) => write!(f, "expected one end task, found {n}"),
            Violation::Unreachable(t) => write!(f, "task {t} unreachable from start"),
            Violation::DanglingEdge(a, b) => write!(f, "edge {a}->{b} references unknown task"),
            Violation::UnknownRole { task, role } => write!(f, "task {task} uses unknown role {role}"),
            Violation::EmptyRole(r) => write!(f, "role {r} has no members"),
            Violation::UnknownMutexTask { set, task } => {
                write!(f, "mutex set {set} references unknown task {task}")
            }
            Violation::UnknownScopeAnchor { element, anchor } => {
                write!(f, "element {element} scope references unknown {anchor}")
            }
            Violation::MissingScopeKey { task, element, role } => write!(
                f,
                "role {role} performs {task} reading sensitive {element} without the scope key"
            ),
            Violation::BadMultiInstance(t) => write!(f, "task {t} has invalid instance bounds"),
        }
    }
}

/// Structural plus cross-aspect consistency report.
pub fn wf_validate(def: &ProcessDefinition) -> Vec<Violation> {
    let mut out = Vec::new();
    let task_ids: BTreeSet<&str> = def.tasks.iter().map(|t| t.id.as_str()).collect();

    let starts = def.start_tasks();
    if starts.len() != 1 {
        out.push(Violation::NoUniqueStart(starts.len()));
    }
    let ends = def.end_tasks();
    if ends.len() != 1 {
        out.push(Violation::NoUniqueEnd(ends.len()));
    }

    for (a, b) in &def.edges {
        if !task_ids.contains(a.as_str()) || !task_ids.contains(b.as_str()) {
            out.push(Violation::DanglingEdge(a.clone(), b.clone()));
        }
    }

    // reachability from the start task
    if let [start] = starts.as_slice() {
        let mut seen = BTreeSet::new();
        let mut stack = vec![*start];
        while let Some(t) = stack.pop() {
            if seen.insert(t.to_string()) {
                stack.extend(def.successors(t));
            }
        }
        for t in &def.tasks {
            if !seen.contains(&t.id) {
                out.push(Violation::Unreachable(t.id.clone()));
            }
        }
    }

    for t in &def.tasks {
        match def.role(&t.role) {
            None => out.push(Violation::UnknownRole { task: t.id.clone(), role: t.role.clone() }),
            Some(r) if r.members.is_empty() => out.push(Violation::EmptyRole(t.role.clone())),
            _ => {}
        }
        if let Some(mi) = &t.multi_instance {
            if mi.min == 0 || mi.max.is_some_and(|m| m < mi.min) {
                out.push(Violation::BadMultiInstance(t.id.clone()));
            }
        }
    }

    for (set, tasks) in &def.mutex_sets {
        for t in tasks {
            if !task_ids.contains(t.as_str()) {
                out.push(Violation::UnknownMutexTask { set: set.clone(), task: t.clone() });
            }
        }
    }

    for element in &def.data {
        match element.scope {
            DataScope::Task | DataScope::ScopeSet | DataScope::MultiInstance => {
                for a in &element.scope_anchor {
                    if !task_ids.contains(a.as_str()) {
                        out.push(Violation::UnknownScopeAnchor {
                            element: element.name.clone(),
                            anchor: a.clone(),
                        });
                    }
                }
            }
            DataScope::Block => {
                for a in &element.scope_anchor {
                    if !def.blocks.contains_key(a) {
                        out.push(Violation::UnknownScopeAnchor {
                            element: element.name.clone(),
                            anchor: a.clone(),
                        });
                    }
                }
            }
            DataScope::Case => {}
        }
    }

    // cross-aspect: roles performing tasks that read sensitive elements
    // must hold the scope key
    for element in &def.data {
        if !element.sensitive {
            continue;
        }
        let scope_id = format!("scope/{}", element.name);
        for task_id in def.tasks_in_scope(element) {
            let Some(task) = def.task(&task_id) else { continue };
            let Some(role) = def.role(&task.role) else { continue };
            if let Some(provisioned) = &role.provisioned_keys {
                if !provisioned.contains(&scope_id) {
                    out.push(Violation::MissingScopeKey {
                        task: task_id.clone(),
                        element: element.name.clone(),
                        role: role.role.clone(),
                    });
                }
            }
        }
    }

    out
}

// ---- work items ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ItemState {
    Offered,
    Allocated,
    Started,
    Completed,
    Failed,
    Withdrawn,
}

impl ItemState {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemState::Offered => "offered",
            ItemState::Allocated => "allocated",
            ItemState::Started => "started",
            ItemState::Completed => "completed",
            ItemState::Failed => "failed",
            ItemState::Withdrawn => "withdrawn",
        }
    }

    pub fn terminal(self) -> bool {
        matches!(self, ItemState::Completed | ItemState::Failed | ItemState::Withdrawn)
    }

    /// The legal transition relation. Withdrawal is allowed from offered
    /// and allocated (the document never names a source, so both pre-start
    /// stages allow it).
    pub fn can_transition_to(self, next: ItemState) -> bool {
        use ItemState::*;
        matches!(
            (self, next),
            (Offered, Allocated)
                | (Offered, Withdrawn)
                | (Allocated, Started)
                | (Allocated, Withdrawn)
                | (Started, Completed)
                | (Started, Failed)
        )
    }
}
