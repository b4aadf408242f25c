//! Token-based distributed mutual exclusion with local and global queues.
//!
//! Two-level hierarchy: members queue at their group leader; leaders without
//! the token queue at the home leader, which tracks where the single token
//! rests and directs its movement. A member enters its critical section only
//! while holding the grant, and the token serves a group's whole local queue
//! before moving on, so local waiters are preferred over remote groups.
//!
//! The state machines are pure — party state in, messages out — which lets
//! the test suite drive every interleaving of a small schedule exhaustively
//! as well as host the same code on the simulator.

use std::collections::VecDeque;

use crate::wire::{Decode, Encode, Reader, WireError, Writer};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MxMsg {
    /// member -> group leader
    Req { requester: u32, seq: u64 },
    /// group leader -> member
    Grant,
    /// member -> group leader
    Release,
    /// group leader -> home leader
    GReq { group: u32 },
    /// token-holding leader -> home: local queue drained
    Idle { group: u32 },
    /// home -> token-holding leader: pass the token to `dest` group
    MoveTo { dest: u32 },
    /// leader -> leader: the token itself
    Token,
}

impl Encode for MxMsg {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            MxMsg::Req { requester, seq } => {
                w.u8(0).u32(*requester).u64(*seq);
            }
            MxMsg::Grant => {
                w.u8(1);
            }
            MxMsg::Release => {
                w.u8(2);
            }
            MxMsg::GReq { group } => {
                w.u8(3).u32(*group);
            }
            MxMsg::Idle { group } => {
                w.u8(4).u32(*group);
            }
            MxMsg::MoveTo { dest } => {
                w.u8(5).u32(*dest);
            }
            MxMsg::Token => {
                w.u8(6);
            }
        }
    }
}

impl Decode for MxMsg {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match r.u8()? {
            0 => MxMsg::Req { requester: r.u32()?, seq: r.u64()? },
            1 => MxMsg::Grant,
            2 => MxMsg::Release,
            3 => MxMsg::GReq { group: r.u32()? },
            4 => MxMsg::Idle { group: r.u32()? },
            5 => MxMsg::MoveTo { dest: r.u32()? },
            6 => MxMsg::Token,
            d => return Err(WireError::BadDiscriminant(d, "MxMsg")),
        })
    }
}

/// Static topology for one mutex: groups with a leader each; the first
/// group's leader doubles as the home and starts with the token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MutexConfig {
    pub mutex_id: String,
    pub groups: Vec<MutexGroupCfg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MutexGroupCfg {
    pub leader: u32,
    pub members: Vec<u32>,
}

impl MutexConfig {
    pub fn group_of(&self, party: u32) -> Option<u32> {
        self.groups
            .iter()
            .position(|g| g.members.contains(&party) || g.leader == party)
            .map(|i| i as u32)
    }

    pub fn leader_of(&self, group: u32) -> u32 {
        self.groups[group as usize].leader
    }

    pub fn home_leader(&self) -> u32 {
        self.groups[0].leader
    }

    pub fn parties(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.leader) {
                out.push(g.leader);
            }
            for &m in &g.members {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
struct MemberState {
    waiting: bool,
    holding: bool,
    next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct LeaderState {
    group: u32,
    local_queue: VecDeque<u32>,
    has_token: bool,
    busy: Option<u32>,
    pending_global: bool,
    /// A movement directive that arrived while the token was serving the
    /// local queue; executed once the queue drains.
    pending_move: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct HomeState {
    global_queue: VecDeque<u32>,
    token_at: u32,
    token_idle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MxEvent {
    Granted,
    Released,
    /// Token left this leader for another group.
    TokenSent { to_group: u32 },
    ProtocolError(String),
    RequestRejected(&'static str),
}

#[derive(Debug, Default)]
pub struct MxStep {
    pub messages: Vec<(u32, MxMsg)>,
    pub events: Vec<MxEvent>,
}

/// One party's mutex state: always a member, possibly a leader, possibly
/// the home.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MxParty {
    pub me: u32,
    cfg: MutexConfig,
    member: MemberState,
    leader: Option<LeaderState>,
    home: Option<HomeState>,
}

impl MxParty {
    pub fn new(me: u32, cfg: MutexConfig) -> Self {
        let group = cfg.group_of(me).expect("party in config");
        let is_leader = cfg.leader_of(group) == me;
        let is_home = cfg.home_leader() == me;
        MxParty {
            me,
            member: MemberState::default(),
            leader: is_leader.then(|| LeaderState {
                group,
                local_queue: VecDeque::new(),
                // the token starts resting at the home group's leader
                has_token: is_home,
                busy: None,
                pending_global: false,
                pending_move: None,
            }),
            home: is_home.then(|| HomeState {
                global_queue: VecDeque::new(),
                token_at: 0,
                token_idle: true,
            }),
            cfg,
        }
    }

    pub fn holding(&self) -> bool {
        self.member.holding
    }

    pub fn waiting(&self) -> bool {
        self.member.waiting
    }

    fn my_group(&self) -> u32 {
        self.cfg.group_of(self.me).expect("in config")
    }

    /// Ask for the critical section. Duplicate requests are rejected.
    pub fn request(&mut self) -> MxStep {
        let mut step = MxStep::default();
        if self.member.waiting || self.member.holding {
            step.events.push(MxEvent::RequestRejected("already waiting or holding"));
            return step;
        }
        self.member.waiting = true;
        let seq = self.member.next_seq;
        self.member.next_seq += 1;
        let leader = self.cfg.leader_of(self.my_group());
        self.route(leader, MxMsg::Req { requester: self.me, seq }, &mut step);
        step
    }

    /// Leave the critical section.
    pub fn release(&mut self) -> MxStep {
        let mut step = MxStep::default();
        if !self.member.holding {
            step.events
                .push(MxEvent::ProtocolError("release without holding".into()));
            return step;
        }
        self.member.holding = false;
        step.events.push(MxEvent::Released);
        let leader = self.cfg.leader_of(self.my_group());
        self.route(leader, MxMsg::Release, &mut step);
        step
    }

    pub fn handle(&mut self, from: u32, msg: MxMsg) -> MxStep {
        let mut step = MxStep::default();
        self.dispatch(from, msg, &mut step);
        step
    }

    /// Deliver a message to this party, short-circuiting self-sends.
    fn route(&mut self, to: u32, msg: MxMsg, step: &mut MxStep) {
        if to == self.me {
            self.dispatch(self.me, msg, step);
        } else {
            step.messages.push((to, msg));
        }
    }

    fn dispatch(&mut self, from: u32, msg: MxMsg, step: &mut MxStep) {
        match msg {
            MxMsg::Req { requester, seq: _ } => self.leader_on_req(requester, step),
            MxMsg::Grant => {
                if !self.member.waiting {
                    step.events
                        .push(MxEvent::ProtocolError("grant while not waiting".into()));
                    return;
                }
                self.member.waiting = false;
                self.member.holding = true;
                step.events.push(MxEvent::Granted);
            }
            MxMsg::Release => self.leader_on_release(from, step),
            MxMsg::GReq { group } => self.home_on_greq(group, step),
            MxMsg::Idle { group } => self.home_on_idle(group, step),
            MxMsg::MoveTo { dest } => self.leader_on_moveto(dest, step),
            MxMsg::Token => self.leader_on_token(step),
        }
    }

    // ---- leader ----

    fn leader_on_req(&mut self, requester: u32, step: &mut MxStep) {
        let Some(leader) = self.leader.as_mut() else {
            step.events
                .push(MxEvent::ProtocolError("request sent to non-leader".into()));
            return;
        };
        if leader.local_queue.contains(&requester) || leader.busy == Some(requester) {
            step.events.push(MxEvent::RequestRejected("duplicate request"));
            return;
        }
        leader.local_queue.push_back(requester);
        self.leader_dispatch(step);
    }

    fn leader_on_release(&mut self, from: u32, step: &mut MxStep) {
        let group;
        {
            let Some(leader) = self.leader.as_mut() else {
                step.events
                    .push(MxEvent::ProtocolError("release sent to non-leader".into()));
                return;
            };
            if leader.busy != Some(from) {
                step.events.push(MxEvent::ProtocolError(format!(
                    "release from {from} who does not hold the token"
                )));
                return;
            }
            leader.busy = None;
            group = leader.group;
        }
        let leader = self.leader.as_ref().expect("checked");
        if leader.local_queue.is_empty() && leader.has_token {
            if leader.pending_move.is_some() {
                self.execute_pending_move(step);
            } else {
                // nothing local: tell home the token is idle here
                let home = self.cfg.home_leader();
                self.route(home, MxMsg::Idle { group }, step);
            }
        } else {
            self.leader_dispatch(step);
        }
    }

    /// Send the token to the group a deferred directive named.
    fn execute_pending_move(&mut self, step: &mut MxStep) {
        let (group, dest);
        {
            let leader = self.leader.as_mut().expect("leader");
            dest = leader.pending_move.take().expect("pending move");
            group = leader.group;
            if dest != group {
                leader.has_token = false;
            }
        }
        if dest != group {
            let dest_leader = self.cfg.leader_of(dest);
            step.events.push(MxEvent::TokenSent { to_group: dest });
            self.route(dest_leader, MxMsg::Token, step);
            let leader = self.leader.as_ref().expect("leader");
            if !leader.local_queue.is_empty() && !leader.pending_global {
                self.leader.as_mut().unwrap().pending_global = true;
                let home = self.cfg.home_leader();
                self.route(home, MxMsg::GReq { group }, step);
            }
        } else {
            self.leader_dispatch(step);
            let leader = self.leader.as_ref().expect("leader");
            if leader.local_queue.is_empty() && leader.busy.is_none() {
                let home = self.cfg.home_leader();
                self.route(home, MxMsg::Idle { group }, step);
            }
        }
    }

    fn leader_on_token(&mut self, step: &mut MxStep) {
        {
            let Some(leader) = self.leader.as_mut() else {
                step.events
                    .push(MxEvent::ProtocolError("token sent to non-leader".into()));
                return;
            };
            leader.has_token = true;
            leader.pending_global = false;
        }
        let leader = self.leader.as_ref().expect("checked");
        if leader.local_queue.is_empty() && leader.busy.is_none() {
            if leader.pending_move.is_some() {
                self.execute_pending_move(step);
            } else {
                // token arrived but nobody wants it anymore
                let group = leader.group;
                let home = self.cfg.home_leader();
                self.route(home, MxMsg::Idle { group }, step);
            }
        } else {
            self.leader_dispatch(step);
        }
    }

    fn leader_on_moveto(&mut self, dest: u32, step: &mut MxStep) {
        {
            let Some(leader) = self.leader.as_mut() else {
                step.events
                    .push(MxEvent::ProtocolError("move sent to non-leader".into()));
                return;
            };
            if !leader.has_token {
                step.events
                    .push(MxEvent::ProtocolError("move directive without token".into()));
                return;
            }
            // home directives can race a local grant; serve the local
            // queue first and move the token when it drains
            leader.pending_move = Some(dest);
        }
        let leader = self.leader.as_ref().expect("checked");
        if leader.busy.is_none() && leader.local_queue.is_empty() {
            self.execute_pending_move(step);
        }
    }

    fn leader_dispatch(&mut self, step: &mut MxStep) {
        let grant_to: Option<u32>;
        {
            let Some(leader) = self.leader.as_mut() else {
                return;
            };
            if leader.has_token && leader.busy.is_none() {
                match leader.local_queue.pop_front() {
                    Some(next) => {
                        leader.busy = Some(next);
                        grant_to = Some(next);
                    }
                    None => grant_to = None,
                }
            } else {
                if !leader.has_token && !leader.local_queue.is_empty() && !leader.pending_global {
                    leader.pending_global = true;
                    let group = leader.group;
                    let home = self.cfg.home_leader();
                    self.route(home, MxMsg::GReq { group }, step);
                }
                return;
            }
        }
        if let Some(next) = grant_to {
            self.route(next, MxMsg::Grant, step);
        }
    }

    // ---- home ----

    fn home_on_greq(&mut self, group: u32, step: &mut MxStep) {
        let directive;
        {
            let Some(home) = self.home.as_mut() else {
                step.events
                    .push(MxEvent::ProtocolError("global request sent to non-home".into()));
                return;
            };
            if home.token_idle {
                home.token_idle = false;
                let holder = home.token_at;
                home.token_at = group;
                directive = Some((holder, group));
            } else {
                if !home.global_queue.contains(&group) {
                    home.global_queue.push_back(group);
                }
                directive = None;
            }
        }
        if let Some((holder, dest)) = directive {
            let holder_leader = self.cfg.leader_of(holder);
            self.route(holder_leader, MxMsg::MoveTo { dest }, step);
        }
    }

    fn home_on_idle(&mut self, group: u32, step: &mut MxStep) {
        let directive;
        {
            let Some(home) = self.home.as_mut() else {
                step.events
                    .push(MxEvent::ProtocolError("idle report sent to non-home".into()));
                return;
            };
            if home.token_at != group {
                // stale: the token has already been directed elsewhere
                return;
            }
            match home.global_queue.pop_front() {
                Some(next) => {
                    home.token_at = next;
                    home.token_idle = false;
                    directive = Some((group, next));
                }
                None => {
                    home.token_idle = true;
                    directive = None;
                }
            }
        }
        if let Some((holder, dest)) = directive {
            let holder_leader = self.cfg.leader_of(holder);
            self.route(holder_leader, MxMsg::MoveTo { dest }, step);
        }
    }
}


/// Exhaustive exploration of every delivery interleaving for a small
/// schedule: each requester asks once at the start and releases as a
/// separate interleaved action. Used by unit and acceptance tests.
#[derive(Debug, Default)]
pub struct ModelStats {
    pub explored: usize,
    pub safety_violations: usize,
    pub stuck_states: usize,
}

pub fn model_check(cfg: &MutexConfig, requesters: &[u32], state_limit: usize) -> ModelStats {
    use std::collections::{HashSet, VecDeque as VD};

    #[derive(Clone, PartialEq, Eq, Hash)]
    struct State {
        parties: Vec<MxParty>,
        // multiset of in-flight messages, kept sorted for hashing
        inflight: Vec<(u32, u32, MxMsg)>,
        granted: Vec<u32>,
    }

    let ids: Vec<u32> = cfg.parties();
    let index_of = |p: u32| ids.iter().position(|&x| x == p).unwrap();

    let mut init_parties: Vec<MxParty> = ids.iter().map(|&i| MxParty::new(i, cfg.clone())).collect();
    let mut init_inflight = Vec::new();
    let mut init_granted = Vec::new();
    for &r in requesters {
        let step = init_parties[index_of(r)].request();
        for (to, m) in step.messages {
            init_inflight.push((r, to, m));
        }
        for e in step.events {
            if matches!(e, MxEvent::Granted) {
                init_granted.push(r);
            }
        }
    }
    init_inflight.sort();

    let mut stats = ModelStats::default();
    let mut visited: HashSet<State> = HashSet::new();
    let mut stack: VD<State> = VD::new();
    stack.push_back(State {
        parties: init_parties,
        inflight: init_inflight,
        granted: init_granted,
    });

    while let Some(state) = stack.pop_back() {
        if !visited.insert(state.clone()) {
            continue;
        }
        stats.explored += 1;
        assert!(
            stats.explored <= state_limit,
            "state space exceeded {state_limit}"
        );

        // safety: at most one holder anywhere
        let holders = state.parties.iter().filter(|p| p.holding()).count();
        if holders > 1 {
            stats.safety_violations += 1;
            continue;
        }

        let mut actions = 0;

        // action: release by any current holder
        for (i, p) in state.parties.iter().enumerate() {
            if p.holding() {
                actions += 1;
                let mut next = state.clone();
                let step = next.parties[i].release();
                for (to, m) in step.messages {
                    next.inflight.push((next.parties[i].me, to, m));
                }
                next.inflight.sort();
                stack.push_back(next);
            }
        }

        // action: deliver any in-flight message
        for mi in 0..state.inflight.len() {
            actions += 1;
            let mut next = state.clone();
            let (from, to, msg) = next.inflight.remove(mi);
            let ti = index_of(to);
            let step = next.parties[ti].handle(from, msg);
            for e in step.events {
                if matches!(e, MxEvent::Granted) {
                    next.granted.push(to);
                }
            }
            for (dest, m) in step.messages {
                next.inflight.push((to, dest, m));
            }
            next.inflight.sort();
            stack.push_back(next);
        }

        if actions == 0 {
            // quiescent: everyone must have been served exactly once
            let mut granted = state.granted.clone();
            granted.sort_unstable();
            let mut want = requesters.to_vec();
            want.sort_unstable();
            if granted != want {
                stats.stuck_states += 1;
            }
        }
    }
    stats
}
