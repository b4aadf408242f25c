//! The composite simulated node: one roster party runs every protocol the
//! scenario activates — agreement instances, the notice board, key
//! sessions, mutex roles, an anonymous channel endpoint, and its part of
//! workflow cases (orchestrator or resource). Messages route by protocol
//! tag; timers drive scheduled scenario actions, mixing ticks, work
//! durations and offer expiries.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use crate::aba::{AbaBehavior, AbaKeys, AbaMsg, AbaOutput, AbaSession, Targets};
use crate::anon::{AnonEvent, AnonNode, AnonPacket, ChannelId, ChannelTopology};
use crate::groupkey::{
    gk_session_key, GkBehavior, GkEvent, GkMsg, GroupKeySession, LongTermKeys, SessionKey,
};
use crate::mutex::{MutexConfig, MxEvent, MxMsg, MxParty};
use crate::notice::{NbEvent, NbMsg, NoticeBoard};
use crate::sim::{Ctx, Node, NodeId, Script};
use crate::tsig::{ts_combine, ts_sign_share, SignatureShare, VerificationKeySet};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};
use crate::workflow::{ItemState, ProcessDefinition, ScopeKeyPlan, TransferMode};

use sha2::{Digest, Sha256};

pub const PROTO_ABA: &str = "aba";
pub const PROTO_NB: &str = "nb";
pub const PROTO_GK: &str = "gk";
pub const PROTO_MX: &str = "mx";
pub const PROTO_ANON: &str = "anon";
pub const PROTO_WF: &str = "wf";

// timer tags
const TIMER_ACTION: u64 = 1;
const TIMER_ANON_TICK: u64 = 2;
const TIMER_ACCEPT: u64 = 3;
const TIMER_WORK: u64 = 4;
const TIMER_EXPIRY: u64 = 5;
const TIMER_MX_RELEASE: u64 = 6;

fn digest8(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(b"qflow-trace-digest");
    h.update(bytes);
    hex::encode(&h.finalize()[..8])
}

/// A scheduled scenario action for one party.
#[derive(Debug, Clone)]
pub enum PartyAction {
    AbaStart { instance: String, input: bool },
    NbPublish { key: String, epoch: u64, value: Vec<u8> },
    NbRetrieve { key: String, epoch: u64, from: u32 },
    MxRequest { mutex_id: String, hold: u64 },
    AnonSend { target: ChannelId, scope: String, payload: Vec<u8> },
    CaseStart,
    MiAdd { task: String },
}

/// Static per-party configuration assembled by the scenario builder.
pub struct PartyConfig {
    pub index: u32,
    pub n: u32,
    pub t: u32,
    /// Shared agreement/notice key bundle, when those protocols run.
    pub aba_keys: Option<AbaKeys>,
    pub behavior: AbaBehavior,
    pub notice: bool,
    /// Long-term DH identity for pairwise channels, when key sessions run.
    pub lt: Option<LongTermKeys>,
    /// sessions this party participates in (pre-declared, scenario level)
    pub gk_sessions: Vec<(String, Vec<u32>, GkBehavior)>,
    pub mutexes: Vec<MutexConfig>,
    pub anon: Option<AnonPartyConfig>,
    pub workflow: Option<WfPartyConfig>,
    /// (tick, action) schedule
    pub schedule: Vec<(u64, PartyAction)>,
}

pub struct AnonPartyConfig {
    pub topo: ChannelTopology,
    pub packet_bytes: usize,
    pub out_rate: usize,
    pub capacity: usize,
    pub ticks: u64,
}

#[derive(Clone)]
pub struct WfPartyConfig {
    pub def: ProcessDefinition,
    pub case_id: String,
    pub orchestrator: u32,
    /// party index per participant name
    pub party_of: BTreeMap<String, u32>,
    pub scope_plan: Vec<ScopeKeyPlan>,
    pub offer_ttl: u64,
    pub work_ticks: u64,
    pub accept_delay_max: u64,
    /// per MI task: (pre, post) processor parties
    pub mi_processors: BTreeMap<String, (u32, u32)>,
    /// route overrides per element: intermediary parties
    pub routes: BTreeMap<String, Vec<u32>>,
    /// behavioral corruption: this party, as post-processor, merges early
    pub omission_post: bool,
    /// behavioral corruption: this party, as transfer relay, flips a byte
    /// inside the sealed payload it forwards
    pub tamper_relay: bool,
    /// team dealing key shares per role (for team-policy tasks)
    pub team_keys: BTreeMap<String, (VerificationKeySet, Vec<crate::tsig::SigningKeyShare>)>,
}

// ---- workflow wire messages ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WfMsg {
    ScopeInit { scope_id: String, members: Vec<u32> },
    ScopeReady { scope_id: String },
    Offer { task: String, instance: u32 },
    Accept { task: String, instance: u32 },
    TeamShare { task: String, instance: u32, share: SignatureShare },
    Allocate { task: String, instance: u32 },
    OfferClosed { task: String, instance: u32 },
    Withdraw { task: String, instance: u32 },
    Started { task: String, instance: u32 },
    Completed { task: String, instance: u32 },
    SpawnDirective { task: String, count: u32 },
    AddDirective { task: String },
    PreAccounting { task: String, sealed: Vec<u8>, hops: Vec<u32> },
    PreReport { task: String, total: u32 },
    MergeReport { task: String, count: u32 },
    InstanceResult { task: String, instance: u32, digest: [u8; 32] },
    DataTransfer { element: String, mode: u8, payload: Vec<u8>, sealed: bool, hops: Vec<u32> },
    CaseAbort { reason: String },
    /// pre-processor -> orchestrator: offer this spawned instance
    SpawnedInstance { task: String, instance: u32 },
    /// orchestrator -> pre-processor: no more dynamic additions
    CloseDirective { task: String },
}

impl Encode for WfMsg {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            WfMsg::ScopeInit { scope_id, members } => {
                w.u8(0).str(scope_id).u32(members.len() as u32);
                for m in members {
                    w.u32(*m);
                }
            }
            WfMsg::ScopeReady { scope_id } => {
                w.u8(1).str(scope_id);
            }
            WfMsg::Offer { task, instance } => {
                w.u8(2).str(task).u32(*instance);
            }
            WfMsg::Accept { task, instance } => {
                w.u8(3).str(task).u32(*instance);
            }
            WfMsg::TeamShare { task, instance, share } => {
                w.u8(4).str(task).u32(*instance);
                share.encode_into(w);
            }
            WfMsg::Allocate { task, instance } => {
                w.u8(5).str(task).u32(*instance);
            }
            WfMsg::OfferClosed { task, instance } => {
                w.u8(6).str(task).u32(*instance);
            }
            WfMsg::Withdraw { task, instance } => {
                w.u8(7).str(task).u32(*instance);
            }
            WfMsg::Started { task, instance } => {
                w.u8(8).str(task).u32(*instance);
            }
            WfMsg::Completed { task, instance } => {
                w.u8(9).str(task).u32(*instance);
            }
            WfMsg::SpawnDirective { task, count } => {
                w.u8(10).str(task).u32(*count);
            }
            WfMsg::AddDirective { task } => {
                w.u8(11).str(task);
            }
            WfMsg::PreAccounting { task, sealed, hops } => {
                w.u8(12).str(task).bytes(sealed).u32(hops.len() as u32);
                for h in hops {
                    w.u32(*h);
                }
            }
            WfMsg::PreReport { task, total } => {
                w.u8(13).str(task).u32(*total);
            }
            WfMsg::MergeReport { task, count } => {
                w.u8(14).str(task).u32(*count);
            }
            WfMsg::InstanceResult { task, instance, digest } => {
                w.u8(15).str(task).u32(*instance).raw(digest);
            }
            WfMsg::DataTransfer { element, mode, payload, sealed, hops } => {
                w.u8(16).str(element).u8(*mode).bytes(payload).bool(*sealed);
                w.u32(hops.len() as u32);
                for h in hops {
                    w.u32(*h);
                }
            }
            WfMsg::CaseAbort { reason } => {
                w.u8(17).str(reason);
            }
            WfMsg::SpawnedInstance { task, instance } => {
                w.u8(18).str(task).u32(*instance);
            }
            WfMsg::CloseDirective { task } => {
                w.u8(19).str(task);
            }
        }
    }
}

impl Decode for WfMsg {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let read_hops = |r: &mut Reader<'_>| -> Result<Vec<u32>, WireError> {
            let len = r.vec_len()?;
            let mut hops = Vec::with_capacity(len.min(16));
            for _ in 0..len {
                hops.push(r.u32()?);
            }
            Ok(hops)
        };
        Ok(match r.u8()? {
            0 => {
                let scope_id = r.str()?.to_string();
                let members = read_hops(r)?;
                WfMsg::ScopeInit { scope_id, members }
            }
            1 => WfMsg::ScopeReady { scope_id: r.str()?.to_string() },
            2 => WfMsg::Offer { task: r.str()?.to_string(), instance: r.u32()? },
            3 => WfMsg::Accept { task: r.str()?.to_string(), instance: r.u32()? },
            4 => WfMsg::TeamShare {
                task: r.str()?.to_string(),
                instance: r.u32()?,
                share: SignatureShare::decode_from(r)?,
            },
            5 => WfMsg::Allocate { task: r.str()?.to_string(), instance: r.u32()? },
            6 => WfMsg::OfferClosed { task: r.str()?.to_string(), instance: r.u32()? },
            7 => WfMsg::Withdraw { task: r.str()?.to_string(), instance: r.u32()? },
            8 => WfMsg::Started { task: r.str()?.to_string(), instance: r.u32()? },
            9 => WfMsg::Completed { task: r.str()?.to_string(), instance: r.u32()? },
            10 => WfMsg::SpawnDirective { task: r.str()?.to_string(), count: r.u32()? },
            11 => WfMsg::AddDirective { task: r.str()?.to_string() },
            12 => {
                let task = r.str()?.to_string();
                let sealed = r.bytes()?.to_vec();
                let hops = read_hops(r)?;
                WfMsg::PreAccounting { task, sealed, hops }
            }
            13 => WfMsg::PreReport { task: r.str()?.to_string(), total: r.u32()? },
            14 => WfMsg::MergeReport { task: r.str()?.to_string(), count: r.u32()? },
            15 => {
                let task = r.str()?.to_string();
                let instance = r.u32()?;
                let mut digest = [0u8; 32];
                digest.copy_from_slice(r.raw(32)?);
                WfMsg::InstanceResult { task, instance, digest }
            }
            16 => {
                let element = r.str()?.to_string();
                let mode = r.u8()?;
                let payload = r.bytes()?.to_vec();
                let sealed = r.bool()?;
                let hops = read_hops(r)?;
                WfMsg::DataTransfer { element, mode, payload, sealed, hops }
            }
            17 => WfMsg::CaseAbort { reason: r.str()?.to_string() },
            18 => WfMsg::SpawnedInstance { task: r.str()?.to_string(), instance: r.u32()? },
            19 => WfMsg::CloseDirective { task: r.str()?.to_string() },
            d => return Err(WireError::BadDiscriminant(d, "WfMsg")),
        })
    }
}

// ---- work item bookkeeping ------------------------------------------------------

#[derive(Debug, Clone)]
struct ItemRecord {
    state: ItemState,
    holder: Option<u32>,
    accepts: Vec<u32>,
    team_shares: Vec<SignatureShare>,
}

#[derive(Debug, Default)]
struct MiRegion {
    pre: u32,
    post: u32,
    completed_lifecycle: u32,
    open: bool,
    pre_total: Option<u32>,
    merge_count: Option<u32>,
    merged: bool,
}

struct CaseState {
    items: BTreeMap<(String, u32), ItemRecord>,
    /// tokens on edges, mirroring the oracle's edge places
    edge_tokens: BTreeMap<(String, String), u32>,
    scopes_ready: BTreeSet<(String, u32)>,
    started: bool,
    aborted: bool,
    completed: bool,
    mi: BTreeMap<String, MiRegion>,
}

/// What a resource is doing locally.
#[derive(Debug, Clone)]
enum ResourceWork {
    AwaitMutex { task: String, instance: u32 },
    Running { task: String, instance: u32 },
}

pub struct Party {
    cfg: PartyConfig,
    aba: BTreeMap<String, AbaSession>,
    notice: Option<NoticeBoard>,
    gk: BTreeMap<String, GroupKeySession>,
    /// gk traffic for sessions not opened locally yet (the opening
    /// directive races the first contributions)
    gk_pending: BTreeMap<String, Vec<(u32, GkMsg)>>,
    scope_keys: BTreeMap<String, SessionKey>,
    mx: BTreeMap<String, MxParty>,
    mx_hold: BTreeMap<String, u64>,
    anon: Option<AnonNode>,
    case: Option<CaseState>,
    resource_work: Vec<ResourceWork>,
    actions: BTreeMap<u64, PartyAction>,
    data_store: BTreeMap<String, Vec<u8>>,
    /// pre-processor accounting per MI task: (spawned total, closed)
    pre_accounting: BTreeMap<String, (u32, bool)>,
    /// post-processor state per MI task: (accounted total, results, merged)
    post_state: BTreeMap<String, (Option<u32>, BTreeSet<u32>, bool)>,
    /// scenario adds still to direct per MI task (orchestrator side)
    mi_adds_remaining: BTreeMap<String, u32>,
    next_timer_ref: u64,
    timer_refs: BTreeMap<u64, (String, u32)>,
}

impl Party {
    pub fn new(cfg: PartyConfig) -> Self {
        let notice = if cfg.notice {
            let keys = cfg.aba_keys.clone().expect("notice requires keys");
            Some(NoticeBoard::new(cfg.n, cfg.t, cfg.index, keys, cfg.behavior))
        } else {
            None
        };
        let mx = cfg
            .mutexes
            .iter()
            .map(|m| (m.mutex_id.clone(), MxParty::new(cfg.index, m.clone())))
            .collect();
        let anon = cfg.anon.as_ref().map(|a| {
            AnonNode::new(cfg.index, a.topo.clone(), a.packet_bytes, a.out_rate, a.capacity)
        });
        let case = cfg.workflow.as_ref().and_then(|w| {
            (w.orchestrator == cfg.index).then(|| CaseState {
                items: BTreeMap::new(),
                edge_tokens: BTreeMap::new(),
                scopes_ready: BTreeSet::new(),
                started: false,
                aborted: false,
                completed: false,
                mi: BTreeMap::new(),
            })
        });
        Party {
            cfg,
            aba: BTreeMap::new(),
            notice,
            gk: BTreeMap::new(),
            gk_pending: BTreeMap::new(),
            scope_keys: BTreeMap::new(),
            mx,
            mx_hold: BTreeMap::new(),
            anon,
            case,
            resource_work: Vec::new(),
            actions: BTreeMap::new(),
            data_store: BTreeMap::new(),
            pre_accounting: BTreeMap::new(),
            post_state: BTreeMap::new(),
            mi_adds_remaining: BTreeMap::new(),
            next_timer_ref: 1,
            timer_refs: BTreeMap::new(),
        }
    }

    fn me(&self) -> u32 {
        self.cfg.index
    }

    /// party index (1-based) -> sim node id (0-based)
    fn node_of(index: u32) -> NodeId {
        (index - 1) as NodeId
    }

    fn send_to_parties(&self, ctx: &mut Ctx<'_>, proto: &'static str, targets: &[u32], body: &[u8]) {
        for &t in targets {
            if t != self.me() {
                ctx.send(Self::node_of(t), proto, body.to_vec());
            }
        }
    }

    fn all_parties(&self) -> Vec<u32> {
        (1..=self.cfg.n).collect()
    }

    // ---- aba ----

    fn route_aba(&mut self, ctx: &mut Ctx<'_>, instance: &str, out: AbaOutput) {
        for flag in &out.flags {
            ctx.flag(PROTO_ABA, instance, flag.clone());
        }
        for phase in &out.phases {
            ctx.trace("phase", PROTO_ABA, instance, phase.clone());
        }
        if let Some(v) = out.decided {
            ctx.trace("decide", PROTO_ABA, instance, format!("v:{}", u8::from(v)));
        }
        for (targets, msg) in out.messages {
            let mut w = Writer::new();
            w.str(instance);
            msg.encode_into(&mut w);
            let body = w.finish();
            match targets {
                Targets::All => {
                    let all = self.all_parties();
                    self.send_to_parties(ctx, PROTO_ABA, &all, &body);
                }
                Targets::Only(list) => self.send_to_parties(ctx, PROTO_ABA, &list, &body),
            }
        }
    }

    fn on_aba_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let mut r = Reader::new(body);
        let Ok(instance) = r.str() else {
            ctx.flag(PROTO_ABA, "?", "undecodable instance".into());
            return;
        };
        let instance = instance.to_string();
        let Ok(msg) = AbaMsg::decode_from(&mut r) else {
            ctx.flag(PROTO_ABA, &instance, format!("undecodable message from {from}"));
            return;
        };
        let sender = (from + 1) as u32;
        let Some(session) = self.aba.get_mut(&instance) else {
            return; // not participating in this instance
        };
        let out = session.handle(sender, msg);
        self.route_aba(ctx, &instance, out);
    }

    // ---- notice ----

    fn route_nb(&mut self, ctx: &mut Ctx<'_>, out: crate::notice::NbOutput) {
        for ev in &out.events {
            match ev {
                NbEvent::Attested { key, epoch, vhash } => ctx.trace(
                    "attested",
                    PROTO_NB,
                    &format!("{key}@{epoch}"),
                    format!("h:{}", hex::encode(&vhash[..8])),
                ),
                NbEvent::PublishRejected { key, epoch } => {
                    ctx.trace("publish-rejected", PROTO_NB, &format!("{key}@{epoch}"), String::new())
                }
                NbEvent::IntegrityError { key, epoch, server } => ctx.trace(
                    "integrity-error",
                    PROTO_NB,
                    &format!("{key}@{epoch}"),
                    format!("server:{server}"),
                ),
                NbEvent::RetrieveOk { key, epoch, value } => ctx.trace(
                    "retrieve-ok",
                    PROTO_NB,
                    &format!("{key}@{epoch}"),
                    format!("h:{}", digest8(value)),
                ),
                NbEvent::NotFound { key, epoch } => {
                    ctx.trace("not-found", PROTO_NB, &format!("{key}@{epoch}"), String::new())
                }
                NbEvent::Flag(f) => ctx.flag(PROTO_NB, "board", f.clone()),
                NbEvent::AbaDecided { instance, value } => ctx.trace(
                    "decide",
                    PROTO_NB,
                    instance,
                    format!("v:{}", u8::from(*value)),
                ),
            }
        }
        for (targets, msg) in out.messages {
            let body = msg.encode();
            match targets {
                Targets::All => {
                    let all = self.all_parties();
                    self.send_to_parties(ctx, PROTO_NB, &all, &body);
                }
                Targets::Only(list) => self.send_to_parties(ctx, PROTO_NB, &list, &body),
            }
        }
    }

    fn on_nb_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let Ok(msg) = NbMsg::decode(body) else {
            ctx.flag(PROTO_NB, "board", format!("undecodable message from {from}"));
            return;
        };
        let sender = (from + 1) as u32;
        let Some(board) = self.notice.as_mut() else { return };
        let out = board.handle(sender, msg);
        self.route_nb(ctx, out);
    }

    // ---- group key ----

    fn open_gk_session(&mut self, ctx: &mut Ctx<'_>, session_id: &str, members: Vec<u32>, behavior: GkBehavior) {
        if self.gk.contains_key(session_id) || !members.contains(&self.me()) {
            return;
        }
        let lt = self.cfg.lt.clone().expect("gk requires long-term keys");
        let mut session = GroupKeySession::new(session_id, members, lt, behavior);
        let out = session.start(ctx.rng());
        self.gk.insert(session_id.to_string(), session);
        self.route_gk(ctx, session_id, out);
        // replay any traffic that arrived before the session opened
        if let Some(pending) = self.gk_pending.remove(session_id) {
            for (sender, msg) in pending {
                let Some(session) = self.gk.get_mut(session_id) else { break };
                let out = session.handle(sender, msg);
                self.route_gk(ctx, session_id, out);
            }
        }
    }

    fn route_gk(&mut self, ctx: &mut Ctx<'_>, session_id: &str, out: crate::groupkey::GkOutput) {
        for ev in &out.events {
            match ev {
                GkEvent::Excluded { member } => {
                    ctx.trace("gk", PROTO_GK, session_id, format!("excluded:{member}"))
                }
                GkEvent::Established => {
                    let session = &self.gk[session_id];
                    let master = session.master().expect("established");
                    // a digest of the key proves agreement without leaking it
                    ctx.trace(
                        "gk",
                        PROTO_GK,
                        session_id,
                        format!("established:{}", digest8(master.bytes())),
                    );
                }
                GkEvent::Aborted { reason } => {
                    ctx.trace("gk", PROTO_GK, session_id, format!("aborted:{reason}"))
                }
                GkEvent::Flag(f) => ctx.flag(PROTO_GK, session_id, f.clone()),
            }
        }
        for (targets, msg) in out.messages {
            let body = msg.encode();
            self.send_to_parties(ctx, PROTO_GK, &targets, &body);
        }
        // derive the scope session key on establishment
        if out.events.iter().any(|e| matches!(e, GkEvent::Established)) {
            let session = &self.gk[session_id];
            if let Some(master) = session.master() {
                let key = gk_session_key(master, session_id, b"case");
                if let Some(anon) = self.anon.as_mut() {
                    anon.add_scope_key(gk_session_key(master, session_id, b"case"));
                }
                self.scope_keys.insert(session_id.to_string(), key);
            }
            self.on_scope_established(ctx, session_id);
        }
    }

    fn on_gk_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let Ok(msg) = GkMsg::decode(body) else {
            ctx.flag(PROTO_GK, "?", format!("undecodable message from {from}"));
            return;
        };
        let session_id = msg.session().to_string();
        let sender = (from + 1) as u32;
        // a session can receive traffic before the local ScopeInit arrives;
        // open it lazily from the pre-declared scenario config
        if !self.gk.contains_key(&session_id) {
            if let Some((id, members, behavior)) = self
                .cfg
                .gk_sessions
                .iter()
                .find(|(id, members, _)| *id == session_id && members.contains(&self.me()))
                .cloned()
            {
                self.open_gk_session(ctx, &id, members, behavior);
            }
        }
        let Some(session) = self.gk.get_mut(&session_id) else {
            // not opened yet: hold the message until the directive arrives
            self.gk_pending.entry(session_id).or_default().push((sender, msg));
            return;
        };
        let out = session.handle(sender, msg);
        self.route_gk(ctx, &session_id, out);
    }

    // ---- mutex ----

    fn route_mx(&mut self, ctx: &mut Ctx<'_>, mutex_id: &str, step: crate::mutex::MxStep) {
        for ev in &step.events {
            match ev {
                MxEvent::Granted => {
                    ctx.trace("mutex", PROTO_MX, mutex_id, "enter".into());
                    self.on_mutex_granted(ctx, mutex_id);
                }
                MxEvent::Released => ctx.trace("mutex", PROTO_MX, mutex_id, "exit".into()),
                MxEvent::TokenSent { to_group } => {
                    ctx.trace("token", PROTO_MX, mutex_id, format!("to-group:{to_group}"))
                }
                MxEvent::ProtocolError(e) => ctx.flag(PROTO_MX, mutex_id, e.clone()),
                MxEvent::RequestRejected(e) => ctx.flag(PROTO_MX, mutex_id, (*e).to_string()),
            }
        }
        for (to, msg) in step.messages {
            let mut w = Writer::new();
            w.str(mutex_id);
            msg.encode_into(&mut w);
            ctx.send(Self::node_of(to), PROTO_MX, w.finish());
        }
    }

    fn on_mx_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let mut r = Reader::new(body);
        let Ok(mutex_id) = r.str() else { return };
        let mutex_id = mutex_id.to_string();
        let Ok(msg) = MxMsg::decode_from(&mut r) else {
            ctx.flag(PROTO_MX, &mutex_id, format!("undecodable message from {from}"));
            return;
        };
        let sender = (from + 1) as u32;
        let Some(party) = self.mx.get_mut(&mutex_id) else { return };
        let step = party.handle(sender, msg);
        self.route_mx(ctx, &mutex_id, step);
    }

    /// Mutex grant arrived: either a scenario hold (timer release) or a
    /// workflow task waiting to start.
    fn on_mutex_granted(&mut self, ctx: &mut Ctx<'_>, mutex_id: &str) {
        if let Some(hold) = self.mx_hold.get(mutex_id).copied() {
            let ref_id = self.next_timer_ref;
            self.next_timer_ref += 1;
            self.timer_refs.insert(ref_id, (mutex_id.to_string(), 0));
            ctx.set_timer(hold.max(1), TIMER_MX_RELEASE, ref_id);
            return;
        }
        // workflow: a task waiting on this mutex can now start
        let work = self.resource_work.iter().position(|w| {
            matches!(w, ResourceWork::AwaitMutex { task, .. }
                if self.workflow_mutex_id(task).as_deref() == Some(mutex_id))
        });
        if let Some(pos) = work {
            let ResourceWork::AwaitMutex { task, instance } = self.resource_work.remove(pos) else {
                unreachable!()
            };
            self.begin_task(ctx, &task, instance);
        }
    }

    // ---- anon ----

    fn on_anon_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let Ok(packet) = AnonPacket::decode(body) else {
            ctx.flag(PROTO_ANON, "channel", format!("undecodable packet from {from}"));
            return;
        };
        let sender = (from + 1) as u32;
        let Some(anon) = self.anon.as_mut() else { return };
        let events = anon.receive(sender, packet);
        for ev in events {
            match ev {
                AnonEvent::Delivered { payload } => {
                    ctx.trace("anon", PROTO_ANON, "channel", format!("delivered:{}", digest8(&payload)))
                }
                AnonEvent::DuplicateDropped => {}
                AnonEvent::BufferOverflow => {
                    ctx.trace("anon", PROTO_ANON, "channel", "overflow".into())
                }
            }
        }
    }

    fn anon_tick(&mut self, ctx: &mut Ctx<'_>) {
        let Some(anon) = self.anon.as_mut() else { return };
        let out = anon.tick(ctx.rng());
        let mut per_link: BTreeMap<u32, usize> = BTreeMap::new();
        for (to, packet) in out.transmissions {
            *per_link.entry(to).or_default() += 1;
            ctx.send(Self::node_of(to), PROTO_ANON, packet.encode());
        }
        let links: Vec<String> = per_link.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        ctx.trace(
            "anon",
            PROTO_ANON,
            "channel",
            format!("emit:{} links:{}", out.emitted, links.join(",")),
        );
        let cfg = self.cfg.anon.as_ref().expect("anon config");
        if ctx.now() < cfg.ticks {
            ctx.set_timer(1, TIMER_ANON_TICK, 0);
        }
    }

    // ---- workflow ----

    fn wf_cfg(&self) -> &WfPartyConfig {
        self.cfg.workflow.as_ref().expect("workflow config")
    }

    fn is_orchestrator(&self) -> bool {
        self.cfg.workflow.as_ref().is_some_and(|w| w.orchestrator == self.me())
    }

    fn workflow_mutex_id(&self, task: &str) -> Option<String> {
        let wf = self.cfg.workflow.as_ref()?;
        wf.def
            .mutex_sets
            .iter()
            .find(|(_, tasks)| tasks.iter().any(|t| t == task))
            .map(|(set, _)| format!("wf/{}/{set}", wf.case_id))
    }

    fn role_parties(&self, role: &str) -> Vec<u32> {
        let wf = self.wf_cfg();
        wf.def
            .role(role)
            .map(|r| {
                r.members
                    .iter()
                    .filter_map(|m| wf.party_of.get(m).copied())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn case_start(&mut self, ctx: &mut Ctx<'_>) {
        let wf = self.wf_cfg().clone();
        ctx.trace("case", PROTO_WF, &wf.case_id, "start".into());
        // provision scope keys first: one session per data element scope,
        // plus one two-party session per multi-instance pre/post pair
        let mut sessions: Vec<(String, Vec<u32>)> = Vec::new();
        for plan in &wf.scope_plan {
            let members: Vec<u32> = plan
                .members
                .iter()
                .filter_map(|m| wf.party_of.get(m).copied())
                .collect();
            sessions.push((plan.scope_id.clone(), members));
            ctx.trace(
                "scopekey",
                PROTO_WF,
                &wf.case_id,
                format!("plan:{}:{}", plan.scope_id, plan.members.join("+")),
            );
        }
        for (task, (pre, post)) in &wf.mi_processors {
            sessions.push((format!("mi/{task}"), vec![*pre, *post]));
        }
        if sessions.is_empty() {
            self.case.as_mut().expect("orchestrator").started = true;
            self.offer_start_task(ctx);
            return;
        }
        for (scope_id, members) in sessions {
            let body = WfMsg::ScopeInit { scope_id: scope_id.clone(), members: members.clone() }.encode();
            self.send_to_parties(ctx, PROTO_WF, &members, &body);
            if members.contains(&self.me()) {
                self.open_gk_session(ctx, &scope_id, members.clone(), GkBehavior::Honest);
            }
            // track which (scope, member) pairs must report ready
            let case = self.case.as_mut().expect("orchestrator");
            for m in members {
                case.scopes_ready.insert((scope_id.clone(), m));
            }
        }
    }

    /// Called on every established scope session at this party.
    fn on_scope_established(&mut self, ctx: &mut Ctx<'_>, scope_id: &str) {
        let Some(wf) = self.cfg.workflow.as_ref() else { return };
        let orchestrator = wf.orchestrator;
        let body = WfMsg::ScopeReady { scope_id: scope_id.to_string() }.encode();
        if orchestrator == self.me() {
            self.note_scope_ready(ctx, scope_id, self.me());
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[orchestrator], &body);
        }
    }

    fn note_scope_ready(&mut self, ctx: &mut Ctx<'_>, scope_id: &str, member: u32) {
        let Some(case) = self.case.as_mut() else { return };
        case.scopes_ready.remove(&(scope_id.to_string(), member));
        if case.scopes_ready.is_empty() && !case.started {
            case.started = true;
            self.offer_start_task(ctx);
        }
    }

    fn offer_start_task(&mut self, ctx: &mut Ctx<'_>) {
        let wf = self.wf_cfg().clone();
        let start = wf.def.start_tasks()[0].to_string();
        self.dispatch_task(ctx, &start);
    }

    /// Orchestrator: a task became control-flow enabled.
    fn dispatch_task(&mut self, ctx: &mut Ctx<'_>, task_id: &str) {
        let wf = self.wf_cfg().clone();
        let task = wf.def.task(task_id).expect("known task").clone();
        if let Some(mi) = &task.multi_instance {
            // enter the multi-instance region: tell pre to spawn
            let (pre, post) = wf.mi_processors[task_id];
            ctx.trace("mi", PROTO_WF, &wf.case_id, format!("enter:{task_id}"));
            let case = self.case.as_mut().expect("orchestrator");
            let region = case.mi.entry(task_id.to_string()).or_default();
            region.pre = pre;
            region.post = post;
            region.open = true;
            let body = WfMsg::SpawnDirective { task: task_id.to_string(), count: mi.min }.encode();
            if pre == self.me() {
                self.on_spawn_directive(ctx, task_id, mi.min);
            } else {
                self.send_to_parties(ctx, PROTO_WF, &[pre], &body);
            }
            // with no dynamic additions scheduled the region closes now
            if self.mi_adds_remaining.get(task_id).copied().unwrap_or(0) == 0 {
                let close = WfMsg::CloseDirective { task: task_id.to_string() }.encode();
                if pre == self.me() {
                    self.close_region(ctx, task_id);
                } else {
                    self.send_to_parties(ctx, PROTO_WF, &[pre], &close);
                }
            }
            return;
        }
        self.offer_item(ctx, task_id, 0);
    }

    fn offer_item(&mut self, ctx: &mut Ctx<'_>, task_id: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        let task = wf.def.task(task_id).expect("known task").clone();
        let members = self.role_parties(&task.role);
        let case = self.case.as_mut().expect("orchestrator");
        case.items.insert(
            (task_id.to_string(), instance),
            ItemRecord { state: ItemState::Offered, holder: None, accepts: Vec::new(), team_shares: Vec::new() },
        );
        ctx.trace(
            "workitem",
            PROTO_WF,
            &wf.case_id,
            format!("{task_id}:{instance}:offered:-"),
        );
        let body = WfMsg::Offer { task: task_id.to_string(), instance }.encode();
        self.send_to_parties(ctx, PROTO_WF, &members, &body);
        if members.contains(&self.me()) {
            self.on_offer(ctx, task_id, instance);
        }
        // offers expire
        let ref_id = self.next_timer_ref;
        self.next_timer_ref += 1;
        self.timer_refs.insert(ref_id, (task_id.to_string(), instance));
        ctx.set_timer(wf.offer_ttl, TIMER_EXPIRY, ref_id);
    }

    // resource side: an offer arrived
    fn on_offer(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        let delay = 1 + (ctx.rng().next_u64() % wf.accept_delay_max.max(1));
        let ref_id = self.next_timer_ref;
        self.next_timer_ref += 1;
        self.timer_refs.insert(ref_id, (task.to_string(), instance));
        ctx.set_timer(delay, TIMER_ACCEPT, ref_id);
    }

    fn send_accept(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        let def_task = wf.def.task(task).expect("known").clone();
        let orchestrator = wf.orchestrator;
        if def_task.team_policy.is_some() {
            // team acceptance: contribute a signature share over the item
            let Some((vks, keys)) = wf.team_keys.get(&def_task.role) else { return };
            let body = team_accept_body(&wf.case_id, task, instance);
            // this party may hold several weighted key shares
            let my_name = wf
                .party_of
                .iter()
                .find(|(_, &p)| p == self.me())
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            for key in keys.iter().filter(|k| k.participant == my_name) {
                let share = ts_sign_share(&body, key, vks).expect("own key");
                ctx.trace("team", PROTO_WF, &wf.case_id, format!("share:{task}:{instance}"));
                let msg = WfMsg::TeamShare { task: task.to_string(), instance, share }.encode();
                if orchestrator == self.me() {
                    let Ok(m) = WfMsg::decode(&msg) else { return };
                    self.on_wf_orchestrator_msg(ctx, self.me(), m);
                } else {
                    self.send_to_parties(ctx, PROTO_WF, &[orchestrator], &msg);
                }
            }
            return;
        }
        let msg = WfMsg::Accept { task: task.to_string(), instance }.encode();
        if orchestrator == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_orchestrator_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[orchestrator], &msg);
        }
    }

    /// Resource: we were allocated an item; run it (mutex-bracketed when
    /// the task belongs to an interleaving set).
    fn on_allocated(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        if let Some(mutex_id) = self.workflow_mutex_id(task) {
            self.resource_work.push(ResourceWork::AwaitMutex {
                task: task.to_string(),
                instance,
            });
            let party = self.mx.get_mut(&mutex_id).expect("mutex configured");
            if party.holding() || party.waiting() {
                // one outstanding request per member: this task queues
                // locally and re-requests when the current span releases
                return;
            }
            let step = party.request();
            self.route_mx(ctx, &mutex_id, step);
            return;
        }
        self.begin_task(ctx, task, instance);
    }

    fn begin_task(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        self.resource_work.push(ResourceWork::Running {
            task: task.to_string(),
            instance,
        });
        let msg = WfMsg::Started { task: task.to_string(), instance }.encode();
        if wf.orchestrator == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_orchestrator_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &msg);
        }
        let ref_id = self.next_timer_ref;
        self.next_timer_ref += 1;
        self.timer_refs.insert(ref_id, (task.to_string(), instance));
        let jitter = ctx.rng().next_u64() % wf.work_ticks.max(1);
        ctx.set_timer(wf.work_ticks.max(1) + jitter, TIMER_WORK, ref_id);
    }

    fn finish_task(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        self.resource_work.retain(|w| {
            !matches!(w, ResourceWork::Running { task: t, instance: i } if t == task && *i == instance)
        });
        // produce data outputs for elements anchored at this task
        for element in wf.def.data.clone() {
            if wf.def.tasks_in_scope(&element).contains(task) {
                let value = format!("v:{}:{}", task, element.name).into_bytes();
                self.data_store.insert(element.name.clone(), value);
            }
        }
        // multi-instance results go to the post-processor as well
        let is_mi = wf.def.task(task).is_some_and(|t| t.multi_instance.is_some());
        if is_mi {
            let (_, post) = wf.mi_processors[task];
            let result = WfMsg::InstanceResult {
                task: task.to_string(),
                instance,
                digest: result_digest(&wf.case_id, task, instance),
            }
            .encode();
            if post == self.me() {
                let Ok(m) = WfMsg::decode(&result) else { return };
                self.on_wf_common_msg(ctx, self.me(), m);
            } else {
                self.send_to_parties(ctx, PROTO_WF, &[post], &result);
            }
        }
        let msg = WfMsg::Completed { task: task.to_string(), instance }.encode();
        if wf.orchestrator == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_orchestrator_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &msg);
        }
        if let Some(mutex_id) = self.workflow_mutex_id(task) {
            let party = self.mx.get_mut(&mutex_id).expect("mutex configured");
            let step = party.release();
            self.route_mx(ctx, &mutex_id, step);
            // another local task may be queued on the same mutex
            let queued = self.resource_work.iter().any(|w| {
                matches!(w, ResourceWork::AwaitMutex { task, .. }
                    if self.workflow_mutex_id(task).as_deref() == Some(mutex_id.as_str()))
            });
            if queued {
                let party = self.mx.get_mut(&mutex_id).expect("mutex configured");
                if !party.holding() && !party.waiting() {
                    let step = party.request();
                    self.route_mx(ctx, &mutex_id, step);
                }
            }
        }
    }

    // orchestrator message handling
    fn on_wf_orchestrator_msg(&mut self, ctx: &mut Ctx<'_>, sender: u32, msg: WfMsg) {
        let wf = self.wf_cfg().clone();
        let case_id = wf.case_id.clone();
        if self.case.as_ref().is_some_and(|c| c.aborted) {
            return;
        }
        match msg {
            WfMsg::ScopeReady { scope_id } => self.note_scope_ready(ctx, &scope_id, sender),
            WfMsg::Accept { task, instance } => {
                let Some(case) = self.case.as_mut() else { return };
                let Some(item) = case.items.get_mut(&(task.clone(), instance)) else { return };
                item.accepts.push(sender);
                if item.state == ItemState::Offered {
                    item.state = ItemState::Allocated;
                    item.holder = Some(sender);
                    ctx.trace(
                        "workitem",
                        PROTO_WF,
                        &case_id,
                        format!("{task}:{instance}:allocated:{sender}"),
                    );
                    let body = WfMsg::Allocate { task: task.clone(), instance }.encode();
                    if sender == self.me() {
                        self.on_allocated(ctx, &task, instance);
                    } else {
                        self.send_to_parties(ctx, PROTO_WF, &[sender], &body);
                    }
                    // close the offer for everyone else
                    let role = wf.def.task(&task).map(|t| t.role.clone()).unwrap_or_default();
                    let others: Vec<u32> = self
                        .role_parties(&role)
                        .into_iter()
                        .filter(|&p| p != sender)
                        .collect();
                    let closed = WfMsg::OfferClosed { task, instance }.encode();
                    self.send_to_parties(ctx, PROTO_WF, &others, &closed);
                }
            }
            WfMsg::TeamShare { task, instance, share } => {
                let Some(team) = wf.def.task(&task).and_then(|t| t.team_policy) else { return };
                let Some((vks, _)) = wf.team_keys.get(&wf.def.task(&task).unwrap().role) else {
                    return;
                };
                let body = team_accept_body(&case_id, &task, instance);
                let Some(case) = self.case.as_mut() else { return };
                let Some(item) = case.items.get_mut(&(task.clone(), instance)) else { return };
                if item.state != ItemState::Offered {
                    return;
                }
                item.team_shares.push(share);
                let shares = item.team_shares.clone();
                if let Ok(composite) = ts_combine(&body, &shares, vks) {
                    item.state = ItemState::Allocated;
                    item.holder = Some(sender); // team representative: last contributor
                    ctx.trace(
                        "team",
                        PROTO_WF,
                        &case_id,
                        format!("allocated:{task}:{instance}:k={}", composite.contributors.len()),
                    );
                    ctx.trace(
                        "workitem",
                        PROTO_WF,
                        &case_id,
                        format!("{task}:{instance}:allocated:team"),
                    );
                    let _ = team;
                    let body = WfMsg::Allocate { task: task.clone(), instance }.encode();
                    if sender == self.me() {
                        self.on_allocated(ctx, &task, instance);
                    } else {
                        self.send_to_parties(ctx, PROTO_WF, &[sender], &body);
                    }
                }
            }
            WfMsg::Started { task, instance } => {
                self.record_transition(ctx, &task, instance, ItemState::Started, sender);
            }
            WfMsg::Completed { task, instance } => {
                if !self.record_transition(ctx, &task, instance, ItemState::Completed, sender) {
                    return;
                }
                let is_mi = wf.def.task(&task).is_some_and(|t| t.multi_instance.is_some());
                if is_mi {
                    let Some(case) = self.case.as_mut() else { return };
                    let region = case.mi.entry(task.clone()).or_default();
                    region.completed_lifecycle += 1;
                    self.try_fire_mi_merge(ctx, &task);
                } else {
                    self.fire_successors(ctx, &task);
                }
            }
            WfMsg::PreReport { task, total } => {
                let Some(case) = self.case.as_mut() else { return };
                let region = case.mi.entry(task.clone()).or_default();
                region.pre_total = Some(total);
                region.open = false;
                self.try_fire_mi_merge(ctx, &task);
            }
            WfMsg::MergeReport { task, count } => {
                let Some(case) = self.case.as_mut() else { return };
                let region = case.mi.entry(task.clone()).or_default();
                region.merge_count = Some(count);
                self.try_fire_mi_merge(ctx, &task);
            }
            WfMsg::CaseAbort { reason } => self.abort_case(ctx, &reason),
            WfMsg::SpawnedInstance { task, instance } => self.offer_item(ctx, &task, instance),
            other => self.on_wf_common_msg(ctx, sender, other),
        }
    }

    /// Orchestrator: validate and record a lifecycle transition reported by
    /// a resource. Illegal transitions are rejected and flagged.
    fn record_transition(
        &mut self,
        ctx: &mut Ctx<'_>,
        task: &str,
        instance: u32,
        next: ItemState,
        sender: u32,
    ) -> bool {
        let case_id = self.wf_cfg().case_id.clone();
        let Some(case) = self.case.as_mut() else { return false };
        let Some(item) = case.items.get_mut(&(task.to_string(), instance)) else {
            ctx.flag(PROTO_WF, &case_id, format!("transition for unknown item {task}:{instance}"));
            return false;
        };
        if !item.state.can_transition_to(next) {
            ctx.flag(
                PROTO_WF,
                &case_id,
                format!(
                    "illegal transition {task}:{instance} {} -> {} rejected",
                    item.state.as_str(),
                    next.as_str()
                ),
            );
            return false;
        }
        item.state = next;
        let holder = item.holder.unwrap_or(sender);
        ctx.trace(
            "workitem",
            PROTO_WF,
            &case_id,
            format!("{task}:{instance}:{}:{holder}", next.as_str()),
        );
        true
    }

    /// Orchestrator: task completed, mark edges and dispatch successors.
    fn fire_successors(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let def_task = wf.def.task(task).expect("known").clone();
        let succs: Vec<String> = wf.def.successors(task).into_iter().map(String::from).collect();
        if succs.is_empty() {
            let case = self.case.as_mut().expect("orchestrator");
            if !case.completed {
                case.completed = true;
                ctx.trace("case", PROTO_WF, &wf.case_id, "complete".into());
            }
            return;
        }
        let chosen: Vec<String> = match def_task.split {
            crate::workflow::SplitKind::Xor => {
                // scenario-deterministic choice: first successor
                let c = succs[0].clone();
                ctx.trace("route", PROTO_WF, &wf.case_id, format!("{task}->{c}"));
                vec![c]
            }
            _ => succs,
        };
        {
            let case = self.case.as_mut().expect("orchestrator");
            for s in &chosen {
                *case.edge_tokens.entry((task.to_string(), s.clone())).or_insert(0) += 1;
            }
        }
        // data transfers ride control flow: elements in scope at both the
        // completed task and a successor move per their transfer mode
        self.direct_transfers(ctx, task, &chosen);
        for s in chosen {
            if self.join_satisfied(&s) {
                self.consume_join_tokens(&s);
                self.dispatch_task(ctx, &s);
            }
        }
    }

    fn join_satisfied(&self, task: &str) -> bool {
        let wf = self.wf_cfg();
        let case = self.case.as_ref().expect("orchestrator");
        let preds = wf.def.predecessors(task);
        if preds.is_empty() {
            return true;
        }
        let token = |p: &str| {
            case.edge_tokens
                .get(&(p.to_string(), task.to_string()))
                .copied()
                .unwrap_or(0)
        };
        match wf.def.task(task).map(|t| t.join).unwrap_or_default() {
            crate::workflow::JoinKind::And => preds.iter().all(|p| token(p) > 0),
            _ => preds.iter().any(|p| token(p) > 0),
        }
    }

    fn consume_join_tokens(&mut self, task: &str) {
        let wf = self.wf_cfg().clone();
        let case = self.case.as_mut().expect("orchestrator");
        let preds: Vec<String> = wf.def.predecessors(task).into_iter().map(String::from).collect();
        match wf.def.task(task).map(|t| t.join).unwrap_or_default() {
            crate::workflow::JoinKind::And => {
                for p in preds {
                    if let Some(t) = case.edge_tokens.get_mut(&(p, task.to_string())) {
                        *t -= 1;
                    }
                }
            }
            _ => {
                for p in preds {
                    if let Some(t) = case.edge_tokens.get_mut(&(p.clone(), task.to_string())) {
                        if *t > 0 {
                            *t -= 1;
                            break;
                        }
                    }
                }
            }
        }
    }

    /// Orchestrator: direct the holder of `from_task` to transfer shared
    /// elements toward the successors' future performers.
    fn direct_transfers(&mut self, ctx: &mut Ctx<'_>, from_task: &str, successors: &[String]) {
        let wf = self.wf_cfg().clone();
        let case = self.case.as_ref().expect("orchestrator");
        let Some(from_item) = case.items.get(&(from_task.to_string(), 0)) else { return };
        let Some(from_holder) = from_item.holder else { return };
        for element in &wf.def.data {
            let in_scope = wf.def.tasks_in_scope(element);
            if !in_scope.contains(from_task) {
                continue;
            }
            for succ in successors {
                if !in_scope.contains(succ) {
                    continue;
                }
                // destination: the successor's role members (broadcast to
                // role; the eventual holder is among them)
                let dest_role = wf.def.task(succ).map(|t| t.role.clone()).unwrap_or_default();
                let dests = self.role_parties(&dest_role);
                let route = wf.routes.get(&element.name).cloned().unwrap_or_default();
                for dest in dests {
                    let directive = TransferDirective {
                        element: element.name.clone(),
                        mode: element.transfer,
                        sensitive: element.sensitive,
                        to: dest,
                        route: route.clone(),
                    };
                    self.send_transfer_directive(ctx, from_holder, &directive);
                }
            }
        }
    }

    fn send_transfer_directive(&mut self, ctx: &mut Ctx<'_>, holder: u32, d: &TransferDirective) {
        // encoded as a DataTransfer skeleton the holder fills in; to keep
        // the message set small the directive reuses DataTransfer with an
        // empty payload and the destination as last hop
        let mut hops = d.route.clone();
        hops.push(d.to);
        let msg = WfMsg::DataTransfer {
            element: d.element.clone(),
            mode: transfer_mode_wire(d.mode),
            payload: Vec::new(),
            sealed: d.sensitive,
            hops,
        }
        .encode();
        if holder == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_common_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[holder], &msg);
        }
    }

    /// Messages any workflow party can receive.
    fn on_wf_common_msg(&mut self, ctx: &mut Ctx<'_>, sender: u32, msg: WfMsg) {
        let wf = self.wf_cfg().clone();
        let case_id = wf.case_id.clone();
        match msg {
            WfMsg::ScopeInit { scope_id, members } => {
                self.open_gk_session(ctx, &scope_id, members, GkBehavior::Honest);
            }
            WfMsg::Offer { task, instance } => self.on_offer(ctx, &task, instance),
            WfMsg::Allocate { task, instance } => self.on_allocated(ctx, &task, instance),
            WfMsg::OfferClosed { .. } | WfMsg::Withdraw { .. } => {}
            WfMsg::SpawnDirective { task, count } => self.on_spawn_directive(ctx, &task, count),
            WfMsg::AddDirective { task } => self.on_add_directive(ctx, &task),
            WfMsg::CloseDirective { task } => self.close_region(ctx, &task),
            WfMsg::PreAccounting { task, sealed, mut hops } => {
                if !hops.is_empty() {
                    // we are a relay on the accounting route
                    let next = hops.remove(0);
                    let mut forwarded = sealed;
                    if wf.tamper_relay && !forwarded.is_empty() {
                        let mid = forwarded.len() / 2;
                        forwarded[mid] ^= 0x20;
                    }
                    let msg = WfMsg::PreAccounting { task, sealed: forwarded, hops: hops.clone() }.encode();
                    let next_hop = if hops.is_empty() { next } else { next };
                    self.send_to_parties(ctx, PROTO_WF, &[next_hop], &msg);
                    return;
                }
                self.on_pre_accounting(ctx, &task, &sealed);
            }
            WfMsg::InstanceResult { task, instance, digest } => {
                self.on_instance_result(ctx, &task, instance, digest);
            }
            WfMsg::DataTransfer { element, mode, payload, sealed, hops } => {
                self.on_data_transfer(ctx, sender, element, mode, payload, sealed, hops);
            }
            WfMsg::CaseAbort { reason } => {
                ctx.trace("case", PROTO_WF, &case_id, format!("abort:{reason}"));
            }
            _ => {}
        }
    }

    // ---- multi-instance machinery ----

    fn mi_scope_key(&self, task: &str) -> Option<&SessionKey> {
        self.scope_keys.get(&format!("mi/{task}"))
    }

    /// Pre-processor: spawn the initial instances and account them.
    fn on_spawn_directive(&mut self, ctx: &mut Ctx<'_>, task: &str, count: u32) {
        let wf = self.wf_cfg().clone();
        for i in 0..count {
            self.spawn_instance(ctx, task, i);
        }
        let _ = wf;
    }

    fn spawn_instance(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32) {
        let wf = self.wf_cfg().clone();
        ctx.trace("mi", PROTO_WF, &wf.case_id, format!("spawn:{task}:{instance}"));
        // account it and tell the orchestrator to run the work item
        let spawned = {
            let entry = self.mi_pre_accounting_mut(task);
            entry.0 += 1;
            entry.0
        };
        let _ = spawned;
        // offers for instances go through the orchestrator so lifecycle
        // bookkeeping stays in one place
        if self.is_orchestrator() {
            self.offer_item(ctx, task, instance);
        } else {
            let body = WfMsg::SpawnedInstance { task: task.to_string(), instance }.encode();
            self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &body);
        }
        self.send_accounting(ctx, task);
    }

    fn mi_pre_accounting_mut(&mut self, task: &str) -> &mut (u32, bool) {
        self.pre_accounting.entry(task.to_string()).or_insert((0, false))
    }

    fn send_accounting(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let (total, closed) = *self.pre_accounting.get(task).expect("accounting exists");
        let Some(key) = self.mi_scope_key(task) else { return };
        let mut w = Writer::new();
        w.u32(total).bool(closed);
        let sealed = crate::groupkey::seal_payload(
            key,
            format!("mi/{task}/acct").as_bytes(),
            task.as_bytes(),
            &w.finish(),
        );
        let (_, post) = wf.mi_processors[task];
        let route = wf.routes.get(&format!("mi/{task}")).cloned().unwrap_or_default();
        let mut hops = route;
        hops.push(post);
        let first = hops.remove(0);
        let msg = WfMsg::PreAccounting { task: task.to_string(), sealed, hops }.encode();
        if first == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_common_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[first], &msg);
        }
        if closed {
            // also report the total to the orchestrator in the clear; the
            // orchestrator is the case's bookkeeper
            let report = WfMsg::PreReport { task: task.to_string(), total }.encode();
            if wf.orchestrator == self.me() {
                let Ok(m) = WfMsg::decode(&report) else { return };
                self.on_wf_orchestrator_msg(ctx, self.me(), m);
            } else {
                self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &report);
            }
        }
    }

    /// Pre-processor: dynamic addition while the region is open.
    fn on_add_directive(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let (total, closed) = *self.mi_pre_accounting_mut(task);
        if closed {
            ctx.flag(PROTO_WF, &wf.case_id, format!("add after close for {task}"));
            return;
        }
        ctx.trace("mi", PROTO_WF, &wf.case_id, format!("add:{task}"));
        self.spawn_instance(ctx, task, total);
    }

    /// Pre-processor: close the region (no more dynamic additions).
    fn close_region(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let entry = self.mi_pre_accounting_mut(task);
        if entry.1 {
            return;
        }
        entry.1 = true;
        let total = entry.0;
        ctx.trace("mi", PROTO_WF, &wf.case_id, format!("close:{task}:{total}"));
        self.send_accounting(ctx, task);
    }

    /// Post-processor: sealed accounting arrived (possibly via relays).
    fn on_pre_accounting(&mut self, ctx: &mut Ctx<'_>, task: &str, sealed: &[u8]) {
        let wf = self.wf_cfg().clone();
        let Some(key) = self.mi_scope_key(task) else { return };
        let opened = crate::groupkey::open_payload(
            key,
            format!("mi/{task}/acct").as_bytes(),
            task.as_bytes(),
            sealed,
        );
        let Ok(plain) = opened else {
            ctx.flag(PROTO_WF, &wf.case_id, format!("accounting authenticity failure for {task}"));
            let abort = WfMsg::CaseAbort { reason: format!("tampered accounting for {task}") }.encode();
            if wf.orchestrator == self.me() {
                self.abort_case(ctx, &format!("tampered accounting for {task}"));
            } else {
                self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &abort);
            }
            return;
        };
        let mut r = Reader::new(&plain);
        let (Ok(total), Ok(closed)) = (r.u32(), r.bool()) else { return };
        if closed {
            let region = self.post_state.entry(task.to_string()).or_default();
            region.0 = Some(total);
        }
        self.try_post_merge(ctx, task);
    }

    /// Post-processor: an instance finished and sent its result here.
    fn on_instance_result(&mut self, ctx: &mut Ctx<'_>, task: &str, instance: u32, _digest: [u8; 32]) {
        let region = self.post_state.entry(task.to_string()).or_default();
        region.1.insert(instance);
        let _ = ctx;
        self.try_post_merge(ctx, task);
    }

    fn try_post_merge(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let region = self.post_state.entry(task.to_string()).or_default();
        if region.2 {
            return;
        }
        let Some(total) = region.0 else { return };
        let have = region.1.len() as u32;
        let ready = if wf.omission_post {
            // corrupted post-processor merges one result short
            have + 1 == total
        } else {
            have == total
        };
        if !ready {
            return;
        }
        region.2 = true;
        let count = if wf.omission_post { have } else { total };
        let msg = WfMsg::MergeReport { task: task.to_string(), count }.encode();
        if wf.orchestrator == self.me() {
            let Ok(m) = WfMsg::decode(&msg) else { return };
            self.on_wf_orchestrator_msg(ctx, self.me(), m);
        } else {
            self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &msg);
        }
    }

    /// Orchestrator: fire the merge once the post reported, the pre's
    /// authenticated total matches, and every instance completed its
    /// lifecycle.
    fn try_fire_mi_merge(&mut self, ctx: &mut Ctx<'_>, task: &str) {
        let wf = self.wf_cfg().clone();
        let Some(case) = self.case.as_mut() else { return };
        let Some(region) = case.mi.get_mut(task) else { return };
        if region.merged {
            return;
        }
        let (Some(pre_total), Some(merge_count)) = (region.pre_total, region.merge_count) else {
            return;
        };
        if region.completed_lifecycle < pre_total {
            if merge_count != region.completed_lifecycle && merge_count >= pre_total {
                // post claims completion the lifecycle record contradicts
                let reason = format!(
                    "merge count {merge_count} contradicts lifecycle {} for {task}",
                    region.completed_lifecycle
                );
                self.abort_case(ctx, &reason);
            }
            return;
        }
        if merge_count != pre_total {
            let reason = format!(
                "instance-count mismatch for {task}: pre says {pre_total}, post merged {merge_count}"
            );
            self.abort_case(ctx, &reason);
            return;
        }
        region.merged = true;
        ctx.trace("mi", PROTO_WF, &wf.case_id, format!("merge:{task}:{merge_count}"));
        self.fire_successors(ctx, task);
    }

    fn abort_case(&mut self, ctx: &mut Ctx<'_>, reason: &str) {
        let wf = self.wf_cfg().clone();
        let Some(case) = self.case.as_mut() else { return };
        if case.aborted {
            return;
        }
        case.aborted = true;
        ctx.trace("case", PROTO_WF, &wf.case_id, format!("abort:{reason}"));
        ctx.flag(PROTO_WF, &wf.case_id, format!("case aborted: {reason}"));
        let msg = WfMsg::CaseAbort { reason: reason.to_string() }.encode();
        let all = self.all_parties();
        self.send_to_parties(ctx, PROTO_WF, &all, &msg);
    }

    // ---- data transfer ----

    #[allow(clippy::too_many_arguments)]
    fn on_data_transfer(
        &mut self,
        ctx: &mut Ctx<'_>,
        _sender: u32,
        element: String,
        mode: u8,
        payload: Vec<u8>,
        sealed: bool,
        mut hops: Vec<u32>,
    ) {
        let wf = self.wf_cfg().clone();
        let case_id = wf.case_id.clone();
        if payload.is_empty() && !hops.is_empty() {
            // we are the source holder receiving a directive: fill in the
            // payload from the local store and ship it along the route
            let Some(value) = self.data_store.get(&element).cloned() else { return };
            let mode_kind = transfer_mode_from_wire(mode);
            let outgoing: Vec<u8> = if sealed {
                let scope_id = format!("scope/{element}");
                let Some(key) = self.scope_keys.get(&scope_id) else {
                    ctx.flag(PROTO_WF, &case_id, format!("no scope key for {element}"));
                    return;
                };
                crate::groupkey::seal_payload(key, element.as_bytes(), b"transfer", &value)
            } else {
                match mode_kind {
                    TransferMode::ByReference | TransferMode::ByReferenceLocked => {
                        format!("ref:{}:{element}", self.me()).into_bytes()
                    }
                    _ => value.clone(),
                }
            };
            if matches!(mode_kind, TransferMode::MoveByValue) {
                self.data_store.remove(&element);
                ctx.trace("data", PROTO_WF, &case_id, format!("removed:{element}"));
            }
            ctx.trace(
                "data",
                PROTO_WF,
                &case_id,
                format!("transfer:{element}:{}", transfer_mode_name(mode_kind)),
            );
            let next = hops.remove(0);
            let msg = WfMsg::DataTransfer { element, mode, payload: outgoing, sealed, hops }.encode();
            self.send_to_parties(ctx, PROTO_WF, &[next], &msg);
            return;
        }
        if !hops.is_empty() {
            // relay toward the destination; a tampering relay flips a byte
            let next = hops.remove(0);
            let mut forwarded = payload;
            if wf.tamper_relay && sealed && !forwarded.is_empty() {
                let mid = forwarded.len() / 2;
                forwarded[mid] ^= 0x40;
                ctx.trace("data", PROTO_WF, &case_id, format!("relay-tamper:{element}"));
            }
            let msg = WfMsg::DataTransfer { element, mode, payload: forwarded, sealed, hops }.encode();
            self.send_to_parties(ctx, PROTO_WF, &[next], &msg);
            return;
        }
        // we are the destination
        if sealed {
            let scope_id = format!("scope/{element}");
            let Some(key) = self.scope_keys.get(&scope_id) else {
                ctx.trace("data", PROTO_WF, &case_id, format!("decrypt-fail:{element}:{}", self.me()));
                return;
            };
            match crate::groupkey::open_payload(key, element.as_bytes(), b"transfer", &payload) {
                Ok(value) => {
                    ctx.trace(
                        "data",
                        PROTO_WF,
                        &case_id,
                        format!("decrypt-ok:{element}:{}", self.me()),
                    );
                    self.data_store.insert(element, value);
                }
                Err(_) => {
                    ctx.trace("data", PROTO_WF, &case_id, format!("integrity-error:{element}"));
                    ctx.flag(PROTO_WF, &case_id, format!("tampered payload for {element}"));
                    let abort = WfMsg::CaseAbort { reason: format!("tampered {element}") }.encode();
                    if wf.orchestrator == self.me() {
                        self.abort_case(ctx, &format!("tampered {element}"));
                    } else {
                        self.send_to_parties(ctx, PROTO_WF, &[wf.orchestrator], &abort);
                    }
                }
            }
        } else {
            let mode_kind = transfer_mode_from_wire(mode);
            match mode_kind {
                TransferMode::ByReference | TransferMode::ByReferenceLocked => {
                    ctx.trace("data", PROTO_WF, &case_id, format!("ref-received:{element}"));
                    self.data_store.insert(format!("{element}#ref"), payload);
                }
                _ => {
                    ctx.trace("data", PROTO_WF, &case_id, format!("received:{element}"));
                    self.data_store.insert(element, payload);
                }
            }
        }
    }
}

/// Pre-processor accounting and post-processor merge state live outside
/// CaseState since those roles belong to resources.
struct TransferDirective {
    element: String,
    mode: TransferMode,
    sensitive: bool,
    to: u32,
    route: Vec<u32>,
}

fn transfer_mode_wire(mode: TransferMode) -> u8 {
    match mode {
        TransferMode::CopyByValue => 0,
        TransferMode::MoveByValue => 1,
        TransferMode::ByReference => 2,
        TransferMode::ByReferenceLocked => 3,
    }
}

fn transfer_mode_from_wire(v: u8) -> TransferMode {
    match v {
        1 => TransferMode::MoveByValue,
        2 => TransferMode::ByReference,
        3 => TransferMode::ByReferenceLocked,
        _ => TransferMode::CopyByValue,
    }
}

fn transfer_mode_name(mode: TransferMode) -> &'static str {
    match mode {
        TransferMode::CopyByValue => "copy",
        TransferMode::MoveByValue => "move",
        TransferMode::ByReference => "ref",
        TransferMode::ByReferenceLocked => "ref-locked",
    }
}

pub fn team_accept_body(case_id: &str, task: &str, instance: u32) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("team").str(case_id).str(task).u32(instance).str("accept");
    w.finish()
}

fn result_digest(case_id: &str, task: &str, instance: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"qflow-mi-result");
    h.update(case_id.as_bytes());
    h.update(task.as_bytes());
    h.update(instance.to_be_bytes());
    h.finalize().into()
}

// ---- sim node integration -----------------------------------------------------

impl Party {
    fn run_action(&mut self, ctx: &mut Ctx<'_>, action: PartyAction) {
        match action {
            PartyAction::AbaStart { instance, input } => {
                if self.aba.contains_key(&instance) {
                    ctx.flag(PROTO_ABA, &instance, "duplicate start rejected".into());
                    return;
                }
                let keys = self.cfg.aba_keys.clone().expect("aba requires keys");
                let behavior = if ctx.script() == Some(Script::Equivocate) {
                    AbaBehavior::Equivocate
                } else {
                    self.cfg.behavior
                };
                let mut session =
                    AbaSession::new(&instance, self.cfg.n, self.cfg.t, self.me(), keys, behavior);
                ctx.trace("input", PROTO_ABA, &instance, format!("v:{}", u8::from(input)));
                match session.start(input) {
                    Ok(out) => {
                        self.aba.insert(instance.clone(), session);
                        self.route_aba(ctx, &instance, out);
                    }
                    Err(e) => ctx.flag(PROTO_ABA, &instance, e.to_string()),
                }
            }
            PartyAction::NbPublish { key, epoch, value } => {
                ctx.trace("publish", PROTO_NB, &format!("{key}@{epoch}"), format!("h:{}", digest8(&value)));
                let Some(board) = self.notice.as_mut() else { return };
                let out = board.publish(&key, epoch, &value);
                self.route_nb(ctx, out);
            }
            PartyAction::NbRetrieve { key, epoch, from } => {
                let Some(board) = self.notice.as_mut() else { return };
                let out = board.retrieve(from, &key, epoch);
                self.route_nb(ctx, out);
            }
            PartyAction::MxRequest { mutex_id, hold } => {
                self.mx_hold.insert(mutex_id.clone(), hold);
                ctx.trace("request", PROTO_MX, &mutex_id, String::new());
                let Some(party) = self.mx.get_mut(&mutex_id) else { return };
                let step = party.request();
                self.route_mx(ctx, &mutex_id, step);
            }
            PartyAction::AnonSend { target, scope, payload } => {
                let Some(key) = self.scope_keys.get(&scope) else {
                    ctx.flag(PROTO_ANON, "channel", format!("no scope key {scope}"));
                    return;
                };
                let Some(anon) = self.anon.as_mut() else { return };
                match anon.send(key, target, &payload) {
                    Ok(_) => {
                        // origin marker is evaluation ground truth for the
                        // attacker census, never classifier input
                        ctx.trace("anon", PROTO_ANON, "channel", format!("origin:{}", digest8(&payload)));
                    }
                    Err(e) => ctx.flag(PROTO_ANON, "channel", e.to_string()),
                }
            }
            PartyAction::CaseStart => self.case_start(ctx),
            PartyAction::MiAdd { task } => {
                let wf = self.wf_cfg().clone();
                let remaining = self.mi_adds_remaining.entry(task.clone()).or_insert(0);
                *remaining = remaining.saturating_sub(1);
                let last = *remaining == 0;
                let (pre, _) = wf.mi_processors[&task];
                let add = WfMsg::AddDirective { task: task.clone() }.encode();
                if pre == self.me() {
                    self.on_add_directive(ctx, &task);
                } else {
                    self.send_to_parties(ctx, PROTO_WF, &[pre], &add);
                }
                if last {
                    let close = WfMsg::CloseDirective { task: task.clone() }.encode();
                    if pre == self.me() {
                        self.close_region(ctx, &task);
                    } else {
                        self.send_to_parties(ctx, PROTO_WF, &[pre], &close);
                    }
                }
            }
        }
    }

    fn on_wf_msg(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: &[u8]) {
        let Ok(msg) = WfMsg::decode(body) else {
            let case = self
                .cfg
                .workflow
                .as_ref()
                .map(|w| w.case_id.clone())
                .unwrap_or_else(|| "?".to_string());
            ctx.flag(PROTO_WF, &case, format!("undecodable message from {from}"));
            return;
        };
        if self.cfg.workflow.is_none() {
            return;
        }
        let sender = (from + 1) as u32;
        if self.is_orchestrator() {
            self.on_wf_orchestrator_msg(ctx, sender, msg);
        } else {
            self.on_wf_common_msg(ctx, sender, msg);
        }
    }
}

impl Node for Party {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        // count scheduled dynamic additions per MI task first; dispatch
        // decisions depend on it
        let mut adds: BTreeMap<String, u32> = BTreeMap::new();
        for (_, action) in &self.cfg.schedule {
            if let PartyAction::MiAdd { task } = action {
                *adds.entry(task.clone()).or_insert(0) += 1;
            }
        }
        self.mi_adds_remaining = adds;

        let schedule = std::mem::take(&mut self.cfg.schedule);
        for (tick, action) in schedule {
            let id = self.next_timer_ref;
            self.next_timer_ref += 1;
            self.actions.insert(id, action);
            ctx.set_timer(tick.max(1), TIMER_ACTION, id);
        }
        // standalone key sessions start immediately
        let sessions = self.cfg.gk_sessions.clone();
        for (id, members, behavior) in sessions {
            self.open_gk_session(ctx, &id, members, behavior);
        }
        if self.anon.is_some() {
            ctx.set_timer(1, TIMER_ANON_TICK, 0);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_>, from: NodeId, proto: &str, body: &[u8]) {
        match proto {
            PROTO_ABA => self.on_aba_msg(ctx, from, body),
            PROTO_NB => self.on_nb_msg(ctx, from, body),
            PROTO_GK => self.on_gk_msg(ctx, from, body),
            PROTO_MX => self.on_mx_msg(ctx, from, body),
            PROTO_ANON => self.on_anon_msg(ctx, from, body),
            PROTO_WF => self.on_wf_msg(ctx, from, body),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, tag: u64, data: u64) {
        match tag {
            TIMER_ACTION => {
                if let Some(action) = self.actions.remove(&data) {
                    self.run_action(ctx, action);
                }
            }
            TIMER_ANON_TICK => self.anon_tick(ctx),
            TIMER_ACCEPT => {
                if let Some((task, instance)) = self.timer_refs.remove(&data) {
                    self.send_accept(ctx, &task, instance);
                }
            }
            TIMER_WORK => {
                if let Some((task, instance)) = self.timer_refs.remove(&data) {
                    self.finish_task(ctx, &task, instance);
                }
            }
            TIMER_EXPIRY => {
                if let Some((task, instance)) = self.timer_refs.remove(&data) {
                    let case_id = self.wf_cfg().case_id.clone();
                    let Some(case) = self.case.as_mut() else { return };
                    let Some(item) = case.items.get_mut(&(task.clone(), instance)) else {
                        return;
                    };
                    if item.state == ItemState::Offered {
                        item.state = ItemState::Withdrawn;
                        ctx.trace(
                            "workitem",
                            PROTO_WF,
                            &case_id,
                            format!("{task}:{instance}:withdrawn:-"),
                        );
                        let role = self
                            .wf_cfg()
                            .def
                            .task(&task)
                            .map(|t| t.role.clone())
                            .unwrap_or_default();
                        let members = self.role_parties(&role);
                        let body = WfMsg::Withdraw { task, instance }.encode();
                        self.send_to_parties(ctx, PROTO_WF, &members, &body);
                    }
                }
            }
            TIMER_MX_RELEASE => {
                if let Some((mutex_id, _)) = self.timer_refs.remove(&data) {
                    let Some(party) = self.mx.get_mut(&mutex_id) else { return };
                    let step = party.release();
                    self.route_mx(ctx, &mutex_id, step);
                }
            }
            _ => {}
        }
    }
}
