//! Scenario documents: a single configuration tree naming the roster,
//! group profile, adversary, protocol instances, schedules and (optionally)
//! a workflow case. `run` turns one plus a seed into a deterministic trace.
//!
//! Key material is dealt inside the builder from a seed-derived ceremony
//! RNG, so a (scenario, seed) pair fully determines every byte of the run.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::aba::{AbaBehavior, AbaKeys};
use crate::anon::{ChannelId, ChannelTopology, Pseudonym};
use crate::coin::CoinScheme;
use crate::group::{GroupParams, Profile};
use crate::groupkey::{GkBehavior, LongTermKeys};
use crate::mutex::{MutexConfig, MutexGroupCfg};
use crate::party::{AnonPartyConfig, Party, PartyAction, PartyConfig, WfPartyConfig};
use crate::sharing::SharingPolicy;
use crate::sim::{AdversarySpec, Node, RunOutcome, Script, SimNet};
use crate::tsig::ts_deal;
use crate::workflow::{wf_validate, ProcessDefinition};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("validation: {0}")]
    Validation(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: String,
    #[serde(default = "default_profile")]
    pub profile: String,
    pub parties: Vec<String>,
    #[serde(default = "default_tick_limit")]
    pub tick_limit: u64,
    #[serde(default = "default_dmax")]
    pub dmax: u64,
    #[serde(default)]
    pub adversary: AdversaryDoc,
    #[serde(default)]
    pub aba: Vec<AbaDoc>,
    #[serde(default)]
    pub notice: Vec<NoticeDoc>,
    #[serde(default)]
    pub groupkey: Vec<GroupKeyDoc>,
    #[serde(default)]
    pub mutex: Vec<MutexDoc>,
    #[serde(default)]
    pub anon: Option<AnonDoc>,
    #[serde(default)]
    pub workflow: Option<WorkflowDoc>,
}

fn default_profile() -> String {
    "toy".to_string()
}
fn default_tick_limit() -> u64 {
    20_000
}
fn default_dmax() -> u64 {
    4
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryDoc {
    #[serde(default)]
    pub budget: usize,
    #[serde(default)]
    pub scripts: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbaDoc {
    pub instance: String,
    /// input bit per party name
    pub inputs: BTreeMap<String, u8>,
    #[serde(default = "default_start_tick")]
    pub at: u64,
}

fn default_start_tick() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoticeDoc {
    pub key: String,
    pub epoch: u64,
    pub publishes: Vec<PublishDoc>,
    #[serde(default)]
    pub retrieves: Vec<RetrieveDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishDoc {
    pub party: String,
    /// hex payload
    pub value: String,
    #[serde(default = "default_start_tick")]
    pub at: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveDoc {
    pub party: String,
    pub from: String,
    pub at: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupKeyDoc {
    pub session: String,
    pub members: Vec<String>,
    #[serde(default)]
    pub equivocator: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutexDoc {
    pub id: String,
    /// groups of party names; the first member of each group leads it
    pub groups: Vec<Vec<String>>,
    #[serde(default)]
    pub requests: Vec<MxRequestDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MxRequestDoc {
    pub party: String,
    pub at: u64,
    #[serde(default = "default_hold")]
    pub hold: u64,
}

fn default_hold() -> u64 {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonDoc {
    /// mask per party name
    pub masks: BTreeMap<String, u8>,
    #[serde(default = "default_out_rate")]
    pub out_rate: usize,
    #[serde(default = "default_packet_bytes")]
    pub packet_bytes: usize,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    pub ticks: u64,
    /// scope session used to seal payloads (must be declared in groupkey)
    pub scope: String,
    #[serde(default)]
    pub sends: Vec<AnonSendDoc>,
}

fn default_out_rate() -> usize {
    crate::anon::DEFAULT_OUT_RATE
}
fn default_packet_bytes() -> usize {
    crate::anon::DEFAULT_PACKET_BYTES
}
fn default_capacity() -> usize {
    crate::anon::DEFAULT_MIX_CAPACITY
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonSendDoc {
    pub from: String,
    pub at: u64,
    /// target channel as a bit string, e.g. "10"
    pub channel: String,
    /// hex payload
    pub payload: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowDoc {
    /// inline process definition document
    pub definition: String,
    pub initiator: String,
    /// participant name -> party name (defaults to identity)
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default = "default_offer_ttl")]
    pub offer_ttl: u64,
    #[serde(default = "default_work_ticks")]
    pub work_ticks: u64,
    #[serde(default = "default_accept_delay")]
    pub accept_delay_max: u64,
    #[serde(default = "default_start_tick")]
    pub at: u64,
    #[serde(default)]
    pub mi_adds: Vec<MiAddDoc>,
    /// corrupted post-processor that merges one result short
    #[serde(default)]
    pub omission_post: Option<String>,
    /// relay that flips a byte in sealed payloads it forwards
    #[serde(default)]
    pub tamper_relay: Option<String>,
    /// transfer routes per element: intermediary party names
    #[serde(default)]
    pub routes: BTreeMap<String, Vec<String>>,
    /// pin the post-processor of an MI task (otherwise round-robin)
    #[serde(default)]
    pub post_processor: BTreeMap<String, String>,
}

fn default_offer_ttl() -> u64 {
    200
}
fn default_work_ticks() -> u64 {
    3
}
fn default_accept_delay() -> u64 {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiAddDoc {
    pub task: String,
    pub at: u64,
}

impl ScenarioDoc {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }
}

fn parse_script(s: &str) -> Result<Script, ScenarioError> {
    Ok(match s {
        "silent" => Script::Silent,
        "equivocate" => Script::Equivocate,
        "delay-max" => Script::DelayMax,
        "replay" => Script::Replay,
        "payload-corrupt" => Script::PayloadCorrupt,
        other => return Err(ScenarioError::Validation(format!("unknown script {other}"))),
    })
}

fn parse_channel_bits(s: &str) -> Result<ChannelId, ScenarioError> {
    let mask = s.len() as u8;
    let mut bits: u32 = 0;
    for (i, c) in s.chars().enumerate() {
        match c {
            '0' => {}
            '1' => bits |= 1 << (31 - i),
            _ => return Err(ScenarioError::Validation(format!("bad channel bits {s}"))),
        }
    }
    ChannelId::new(bits, mask).map_err(|e| ScenarioError::Validation(e.to_string()))
}

/// Everything `run` needs, resolved and validated.
pub struct BuiltScenario {
    pub doc: ScenarioDoc,
}

pub fn validate(doc: ScenarioDoc) -> Result<BuiltScenario, ScenarioError> {
    let names = &doc.parties;
    let known = |n: &String| names.contains(n);
    if names.is_empty() {
        return Err(ScenarioError::Validation("empty roster".into()));
    }
    for p in doc.adversary.scripts.keys() {
        if !known(p) {
            return Err(ScenarioError::Validation(format!("unknown scripted party {p}")));
        }
    }
    for a in &doc.aba {
        for p in a.inputs.keys() {
            if !known(p) {
                return Err(ScenarioError::Validation(format!("unknown aba party {p}")));
            }
        }
        if a.inputs.len() != names.len() {
            return Err(ScenarioError::Validation(format!(
                "aba {} needs an input per party",
                a.instance
            )));
        }
    }
    for n in &doc.notice {
        for p in &n.publishes {
            if !known(&p.party) {
                return Err(ScenarioError::Validation(format!("unknown publisher {}", p.party)));
            }
            hex::decode(&p.value)
                .map_err(|_| ScenarioError::Validation(format!("bad hex value for {}", n.key)))?;
        }
        for r in &n.retrieves {
            if !known(&r.party) || !known(&r.from) {
                return Err(ScenarioError::Validation("unknown retrieve party".into()));
            }
        }
    }
    for g in &doc.groupkey {
        for m in &g.members {
            if !known(m) {
                return Err(ScenarioError::Validation(format!("unknown session member {m}")));
            }
        }
        if let Some(e) = &g.equivocator {
            if !g.members.contains(e) {
                return Err(ScenarioError::Validation("equivocator not a member".into()));
            }
            if !doc.adversary.scripts.contains_key(e) {
                return Err(ScenarioError::Validation(
                    "behavioral equivocator must be in the adversary scripts".into(),
                ));
            }
        }
    }
    for m in &doc.mutex {
        for g in &m.groups {
            if g.is_empty() {
                return Err(ScenarioError::Validation("empty mutex group".into()));
            }
            for p in g {
                if !known(p) {
                    return Err(ScenarioError::Validation(format!("unknown mutex party {p}")));
                }
            }
        }
        for r in &m.requests {
            if !known(&r.party) {
                return Err(ScenarioError::Validation(format!("unknown requester {}", r.party)));
            }
        }
    }
    if let Some(anon) = &doc.anon {
        for p in anon.masks.keys() {
            if !known(p) {
                return Err(ScenarioError::Validation(format!("unknown anon party {p}")));
            }
        }
        if !doc.groupkey.iter().any(|g| g.session == anon.scope) {
            return Err(ScenarioError::Validation(format!(
                "anon scope session {} not declared",
                anon.scope
            )));
        }
        for s in &anon.sends {
            if !known(&s.from) {
                return Err(ScenarioError::Validation(format!("unknown sender {}", s.from)));
            }
            hex::decode(&s.payload)
                .map_err(|_| ScenarioError::Validation("bad hex payload".into()))?;
            parse_channel_bits(&s.channel)?;
        }
    }
    if let Some(wf) = &doc.workflow {
        let def = ProcessDefinition::from_toml_str(&wf.definition)
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        let report = wf_validate(&def);
        if !report.is_empty() {
            let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            return Err(ScenarioError::Validation(format!(
                "definition invalid: {}",
                lines.join("; ")
            )));
        }
        if !known(&wf.initiator) {
            return Err(ScenarioError::Validation("unknown initiator".into()));
        }
        for participant in def.participants() {
            let bound = wf.bindings.get(&participant).unwrap_or(&participant);
            if !known(bound) {
                return Err(ScenarioError::Validation(format!(
                    "participant {participant} not bound to a roster party"
                )));
            }
        }
        for behavioral in [&wf.omission_post, &wf.tamper_relay] {
            if let Some(p) = behavioral {
                if !doc.adversary.scripts.contains_key(p) {
                    return Err(ScenarioError::Validation(
                        "behavioral workflow adversary must be in the adversary scripts".into(),
                    ));
                }
            }
        }
    }
    Ok(BuiltScenario { doc })
}

/// Execute a validated scenario under a seed.
pub fn run(built: &BuiltScenario, seed: u64) -> Result<RunOutcome, ScenarioError> {
    let doc = &built.doc;
    let n = doc.parties.len() as u32;
    let index_of = |name: &str| -> u32 {
        doc.parties.iter().position(|p| p == name).expect("validated") as u32 + 1
    };
    let params = GroupParams::for_profile(
        Profile::parse(&doc.profile)
            .ok_or_else(|| ScenarioError::Validation(format!("unknown profile {}", doc.profile)))?,
    );

    // ceremony RNG: all key material is a function of (scenario, seed)
    let mut ceremony = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    // adversary
    let mut scripts = BTreeMap::new();
    for (party, script) in &doc.adversary.scripts {
        scripts.insert((index_of(party) - 1) as usize, parse_script(script)?);
    }
    let adversary = AdversarySpec {
        scripts,
        budget: doc.adversary.budget,
    };

    // the corruption bound for agreement: adversary budget
    let t = doc.adversary.budget as u32;
    let needs_aba = !doc.aba.is_empty() || !doc.notice.is_empty();
    let aba_keys: Option<Vec<AbaKeys>> = if needs_aba {
        if n < 3 * t + 1 {
            return Err(ScenarioError::Validation(format!(
                "agreement needs n >= 3t+1, got n={n} t={t}"
            )));
        }
        let (vks, sig_keys) = ts_deal(
            &SharingPolicy::simple(n - t, n),
            &params,
            &mut ceremony,
            &format!("{}::sig", doc.name),
        )
        .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        let (coin_vks, coin_keys) = ts_deal(
            &SharingPolicy::simple(t + 1, n),
            &params,
            &mut ceremony,
            &format!("{}::coin", doc.name),
        )
        .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        Some(
            sig_keys
                .into_iter()
                .zip(coin_keys)
                .map(|(sig_key, coin_key)| AbaKeys {
                    vks: vks.clone(),
                    sig_key,
                    coin: CoinScheme { vks: coin_vks.clone() },
                    coin_key,
                })
                .collect(),
        )
    } else {
        None
    };

    let needs_lt = !doc.groupkey.is_empty() || doc.anon.is_some() || doc.workflow.is_some();
    let lt_keys: Option<BTreeMap<u32, LongTermKeys>> = needs_lt.then(|| {
        let indices: Vec<u32> = (1..=n).collect();
        LongTermKeys::generate(&params, &indices, &mut ceremony)
    });

    // mutex configs (shared across parties)
    let mut mutex_cfgs: Vec<MutexConfig> = Vec::new();
    for m in &doc.mutex {
        mutex_cfgs.push(MutexConfig {
            mutex_id: m.id.clone(),
            groups: m
                .groups
                .iter()
                .map(|g| MutexGroupCfg {
                    leader: index_of(&g[0]),
                    members: g.iter().map(|p| index_of(p)).collect(),
                })
                .collect(),
        });
    }

    // anon topology
    let anon_shared = doc.anon.as_ref().map(|a| {
        let lt = lt_keys.as_ref().expect("lt keys for anon");
        let membership: BTreeMap<u32, ChannelId> = a
            .masks
            .iter()
            .map(|(name, mask)| {
                let idx = index_of(name);
                let pk = lt[&idx].publics[&idx].value().to_bytes_be();
                let pseudonym = Pseudonym::from_public_key(&pk);
                (idx, pseudonym.channel(*mask).expect("validated mask"))
            })
            .collect();
        ChannelTopology::new(membership)
    });

    // workflow shared config
    let wf_shared = match &doc.workflow {
        None => None,
        Some(wf) => {
            let def = ProcessDefinition::from_toml_str(&wf.definition)
                .map_err(|e| ScenarioError::Validation(e.to_string()))?;
            let mut party_of = BTreeMap::new();
            for participant in def.participants() {
                let bound = wf.bindings.get(&participant).unwrap_or(&participant);
                party_of.insert(participant.clone(), index_of(bound));
            }
            let scope_plan = def
                .scope_key_plan()
                .map_err(|e| ScenarioError::Validation(e.to_string()))?;
            // pre/post processors per MI task: round-robin over role
            // members in definition order, successor's role for the post
            let mut mi_processors = BTreeMap::new();
            let mut rr = 0usize;
            for task in &def.tasks {
                if task.multi_instance.is_none() {
                    continue;
                }
                let role_members: Vec<u32> = def
                    .role(&task.role)
                    .map(|r| r.members.iter().map(|m| party_of[m]).collect())
                    .unwrap_or_default();
                let pre = role_members[rr % role_members.len()];
                rr += 1;
                let post = match wf.post_processor.get(&task.id) {
                    Some(name) => index_of(name),
                    None => {
                        let succs = def.successors(&task.id);
                        let succ_role = succs
                            .first()
                            .and_then(|s| def.task(s))
                            .map(|t| t.role.clone())
                            .unwrap_or_else(|| task.role.clone());
                        let members: Vec<u32> = def
                            .role(&succ_role)
                            .map(|r| r.members.iter().map(|m| party_of[m]).collect())
                            .unwrap_or_default();
                        members[rr % members.len()]
                    }
                };
                mi_processors.insert(task.id.clone(), (pre, post));
            }
            let routes: BTreeMap<String, Vec<u32>> = wf
                .routes
                .iter()
                .map(|(el, via)| (el.clone(), via.iter().map(|p| index_of(p)).collect()))
                .collect();
            // per-case mutex configs for interleaving sets: all case
            // participants in one group led by the orchestrator
            let case_id = format!("case-{}", doc.name);
            let orchestrator = index_of(&wf.initiator);
            for set in def.mutex_sets.keys() {
                let mut members: Vec<u32> = party_of.values().copied().collect();
                members.sort_unstable();
                members.dedup();
                if !members.contains(&orchestrator) {
                    members.push(orchestrator);
                }
                mutex_cfgs.push(MutexConfig {
                    mutex_id: format!("wf/{case_id}/{set}"),
                    groups: vec![MutexGroupCfg { leader: orchestrator, members }],
                });
            }
            Some((def, party_of, scope_plan, mi_processors, routes, case_id, orchestrator))
        }
    };

    // team dealings for team-policy tasks: weighted by how many shares a
    // participant should hold (1 each unless a weights table appears in
    // the role name form "name*weight" — plain roles give one share each)
    let mut team_keys: BTreeMap<String, (crate::tsig::VerificationKeySet, Vec<crate::tsig::SigningKeyShare>)> =
        BTreeMap::new();
    if let Some((def, _, _, _, _, _, _)) = &wf_shared {
        for task in &def.tasks {
            let Some((k, _l)) = task.team_policy else { continue };
            if team_keys.contains_key(&task.role) {
                continue;
            }
            let role = def.role(&task.role).expect("validated");
            let mut weights = BTreeMap::new();
            for m in &role.members {
                *weights.entry(m.clone()).or_insert(0) += 1;
            }
            let policy = SharingPolicy::weighted(k, weights);
            let (vks, keys) = ts_deal(
                &policy,
                &params,
                &mut ceremony,
                &format!("{}::team::{}", doc.name, task.role),
            )
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
            team_keys.insert(task.role.clone(), (vks, keys));
        }
    }

    // per-party schedules
    let mut schedules: BTreeMap<u32, Vec<(u64, PartyAction)>> = BTreeMap::new();
    for a in &doc.aba {
        for (party, input) in &a.inputs {
            schedules.entry(index_of(party)).or_default().push((
                a.at,
                PartyAction::AbaStart {
                    instance: a.instance.clone(),
                    input: *input != 0,
                },
            ));
        }
    }
    for nd in &doc.notice {
        for p in &nd.publishes {
            schedules.entry(index_of(&p.party)).or_default().push((
                p.at,
                PartyAction::NbPublish {
                    key: nd.key.clone(),
                    epoch: nd.epoch,
                    value: hex::decode(&p.value).expect("validated"),
                },
            ));
        }
        for r in &nd.retrieves {
            schedules.entry(index_of(&r.party)).or_default().push((
                r.at,
                PartyAction::NbRetrieve {
                    key: nd.key.clone(),
                    epoch: nd.epoch,
                    from: index_of(&r.from),
                },
            ));
        }
    }
    for m in &doc.mutex {
        for r in &m.requests {
            schedules.entry(index_of(&r.party)).or_default().push((
                r.at,
                PartyAction::MxRequest { mutex_id: m.id.clone(), hold: r.hold },
            ));
        }
    }
    if let Some(anon) = &doc.anon {
        for s in &anon.sends {
            schedules.entry(index_of(&s.from)).or_default().push((
                s.at,
                PartyAction::AnonSend {
                    target: parse_channel_bits(&s.channel).expect("validated"),
                    scope: anon.scope.clone(),
                    payload: hex::decode(&s.payload).expect("validated"),
                },
            ));
        }
    }
    if let Some(wf) = &doc.workflow {
        let initiator = index_of(&wf.initiator);
        schedules
            .entry(initiator)
            .or_default()
            .push((wf.at, PartyAction::CaseStart));
        for add in &wf.mi_adds {
            schedules
                .entry(initiator)
                .or_default()
                .push((add.at, PartyAction::MiAdd { task: add.task.clone() }));
        }
    }

    // assemble parties
    let mut nodes: Vec<Box<dyn Node>> = Vec::new();
    for idx in 1..=n {
        let name = &doc.parties[(idx - 1) as usize];
        let gk_sessions: Vec<(String, Vec<u32>, GkBehavior)> = doc
            .groupkey
            .iter()
            .filter(|g| g.members.iter().any(|m| index_of(m) == idx))
            .map(|g| {
                let behavior = if g.equivocator.as_deref() == Some(name.as_str()) {
                    GkBehavior::EquivocateNonce
                } else {
                    GkBehavior::Honest
                };
                (
                    g.session.clone(),
                    g.members.iter().map(|m| index_of(m)).collect(),
                    behavior,
                )
            })
            .collect();
        let anon_cfg = doc.anon.as_ref().and_then(|a| {
            a.masks.contains_key(name).then(|| AnonPartyConfig {
                topo: anon_shared.clone().expect("topology"),
                packet_bytes: a.packet_bytes,
                out_rate: a.out_rate,
                capacity: a.capacity,
                ticks: a.ticks,
            })
        });
        let wf_cfg = wf_shared.as_ref().map(
            |(def, party_of, scope_plan, mi_processors, routes, case_id, orchestrator)| {
                let wf = doc.workflow.as_ref().expect("workflow doc");
                WfPartyConfig {
                    def: def.clone(),
                    case_id: case_id.clone(),
                    orchestrator: *orchestrator,
                    party_of: party_of.clone(),
                    scope_plan: scope_plan.clone(),
                    offer_ttl: wf.offer_ttl,
                    work_ticks: wf.work_ticks,
                    accept_delay_max: wf.accept_delay_max,
                    mi_processors: mi_processors.clone(),
                    routes: routes.clone(),
                    omission_post: wf.omission_post.as_deref() == Some(name.as_str()),
                    tamper_relay: wf.tamper_relay.as_deref() == Some(name.as_str()),
                    team_keys: team_keys.clone(),
                }
            },
        );
        let behavior = if doc.adversary.scripts.get(name).map(|s| s.as_str()) == Some("equivocate")
        {
            AbaBehavior::Equivocate
        } else {
            AbaBehavior::Honest
        };
        let cfg = PartyConfig {
            index: idx,
            n,
            t,
            aba_keys: aba_keys.as_ref().map(|k| k[(idx - 1) as usize].clone()),
            behavior,
            notice: !doc.notice.is_empty(),
            lt: lt_keys.as_ref().map(|l| l[&idx].clone()),
            gk_sessions,
            mutexes: mutex_cfgs
                .iter()
                .filter(|m| m.parties().contains(&idx))
                .cloned()
                .collect(),
            anon: anon_cfg,
            workflow: wf_cfg,
            schedule: schedules.remove(&idx).unwrap_or_default(),
        };
        nodes.push(Box::new(Party::new(cfg)));
    }

    let mut net = SimNet::new(
        doc.parties.clone(),
        adversary,
        doc.dmax,
        doc.tick_limit,
        seed,
    )
    .map_err(|e| ScenarioError::Validation(e.to_string()))?;

    emit_meta(&mut net, doc, &wf_shared, seed);
    Ok(net.run(&mut nodes))
}

type WfShared = (
    ProcessDefinition,
    BTreeMap<String, u32>,
    Vec<crate::workflow::ScopeKeyPlan>,
    BTreeMap<String, (u32, u32)>,
    BTreeMap<String, Vec<u32>>,
    String,
    u32,
);

fn emit_meta(net: &mut SimNet, doc: &ScenarioDoc, wf: &Option<WfShared>, seed: u64) {
    net.meta("scenario", format!("name:{} seed:{seed}", doc.name));
    net.meta("roster", doc.parties.join(","));
    let adv: Vec<String> = doc
        .adversary
        .scripts
        .iter()
        .map(|(p, s)| format!("{p}:{s}"))
        .collect();
    net.meta(
        "adversary",
        if adv.is_empty() { "none".to_string() } else { adv.join(",") },
    );
    for a in &doc.aba {
        let inputs: Vec<String> = a.inputs.iter().map(|(p, v)| format!("{p}={v}")).collect();
        net.meta(
            &format!("aba:{}", a.instance),
            format!(
                "n:{} t:{} inputs:{}",
                doc.parties.len(),
                doc.adversary.budget,
                inputs.join(",")
            ),
        );
    }
    for nd in &doc.notice {
        net.meta(
            &format!("notice:{}@{}", nd.key, nd.epoch),
            format!("publishers:{}", nd.publishes.len()),
        );
    }
    for g in &doc.groupkey {
        net.meta(
            &format!("gk:{}", g.session),
            format!(
                "members:{} equivocator:{}",
                g.members.join("+"),
                g.equivocator.clone().unwrap_or_else(|| "-".to_string())
            ),
        );
    }
    for m in &doc.mutex {
        let groups: Vec<String> = m.groups.iter().map(|g| g.join("+")).collect();
        net.meta(&format!("mutex:{}", m.id), format!("groups:{}", groups.join("/")));
    }
    if let Some(a) = &doc.anon {
        let masks: Vec<String> = a.masks.iter().map(|(p, m)| format!("{p}={m}")).collect();
        net.meta(
            "anon",
            format!("out_rate:{} masks:{}", a.out_rate, masks.join(",")),
        );
    }
    if let Some((def, party_of, scope_plan, mi_processors, _, case_id, orchestrator)) = wf {
        let wf_doc = doc.workflow.as_ref().expect("doc");
        net.meta("wf:def", hex::encode(wf_doc.definition.as_bytes()));
        let bindings: Vec<String> = party_of
            .iter()
            .map(|(participant, idx)| {
                format!("{participant}={}", doc.parties[(*idx - 1) as usize])
            })
            .collect();
        net.meta(
            "wf:case",
            format!(
                "id:{case_id} orchestrator:{} bindings:{}",
                doc.parties[(*orchestrator - 1) as usize],
                bindings.join(",")
            ),
        );
        for plan in scope_plan {
            net.meta(
                &format!("wf:scope:{}", plan.scope_id),
                format!(
                    "element:{} sensitive:{} members:{}",
                    plan.element,
                    plan.sensitive,
                    plan.members.join("+")
                ),
            );
        }
        for (task, (pre, post)) in mi_processors {
            net.meta(
                &format!("wf:mi:{task}"),
                format!(
                    "pre:{} post:{} min:{}",
                    doc.parties[(*pre - 1) as usize],
                    doc.parties[(*post - 1) as usize],
                    def.task(task)
                        .and_then(|t| t.multi_instance.as_ref())
                        .map(|m| m.min)
                        .unwrap_or(1)
                ),
            );
        }
        net.meta(
            "wf:expect",
            format!(
                "omission:{} tamper:{}",
                wf_doc.omission_post.clone().unwrap_or_else(|| "-".into()),
                wf_doc.tamper_relay.clone().unwrap_or_else(|| "-".into())
            ),
        );
    }
}
