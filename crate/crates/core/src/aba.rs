//! Asynchronous binary Byzantine agreement.
//!
//! Structure per round, all thresholds `n - t` with `n >= 3t + 1`:
//!
//! * pre-processing: everyone broadcasts a signed init carrying its input;
//! * pre-vote: a value may be pre-voted once `t + 1` distinct parties back
//!   it with init shares (round 1) or once a justification from the
//!   previous round exists (later rounds);
//! * main-vote: `n - t` pre-votes all for `b` give a main-vote for `b`,
//!   justified by the combined pre-vote signature; a mixed collection
//!   gives `abstain`, justified by two conflicting justified pre-votes;
//! * decision: `n - t` main-votes all for `b` decide `b`; a mix of `b`
//!   and abstain carries `b` into the next round; all-abstain falls back
//!   to the threshold coin for the round.
//!
//! Every vote carries a justification strong enough that a corrupted
//! party cannot claim a value nobody pre-voted: a plain signed vote
//! without the embedded evidence would let one equivocating party split
//! honest decisions, which the adversarial test matrix would catch. A
//! party that decides keeps participating for one extra round so
//! stragglers cross their thresholds, then goes quiet.

use std::collections::{BTreeMap, BTreeSet};

use crate::coin::{aba_coin_name, coin_combine, coin_share, coin_verify_share, CoinScheme, CoinShare};
use crate::tsig::{
    ts_combine, ts_sign_share, ts_verify, ts_verify_share, CompositeSignature, SignatureShare,
    SigningKeyShare, VerificationKeySet,
};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

/// Rounds past this are a protocol failure; honest runs decide in a
/// handful even against the scripted adversaries.
pub const ROUND_CAP: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MainVal {
    Zero,
    One,
    Abstain,
}

impl MainVal {
    fn from_bit(b: bool) -> Self {
        if b {
            MainVal::One
        } else {
            MainVal::Zero
        }
    }

    fn bit(self) -> Option<bool> {
        match self {
            MainVal::Zero => Some(false),
            MainVal::One => Some(true),
            MainVal::Abstain => None,
        }
    }

    fn wire(self) -> u8 {
        match self {
            MainVal::Zero => 0,
            MainVal::One => 1,
            MainVal::Abstain => 2,
        }
    }

    fn from_wire(v: u8) -> Result<Self, WireError> {
        match v {
            0 => Ok(MainVal::Zero),
            1 => Ok(MainVal::One),
            2 => Ok(MainVal::Abstain),
            d => Err(WireError::BadDiscriminant(d, "MainVal")),
        }
    }
}

// ---- canonical vote bodies --------------------------------------------------

pub fn init_body(instance: &str, value: bool) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("init").str(instance).bool(value);
    w.finish()
}

pub fn prevote_body(instance: &str, round: u64, value: bool) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("prevote").str(instance).u64(round).bool(value);
    w.finish()
}

pub fn mainvote_body(instance: &str, round: u64, value: MainVal) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("mainvote").str(instance).u64(round).u8(value.wire());
    w.finish()
}

// ---- messages ---------------------------------------------------------------

/// Why a pre-vote for its value is admissible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PreVoteJust {
    /// Round 1: at least t+1 distinct init shares for the value.
    Backing(Vec<SignatureShare>),
    /// Round r: a combined signature over `n - t` pre-votes for the value
    /// in round r-1.
    Hard(CompositeSignature),
    /// Round r: everyone abstained in r-1 (combined abstain signature) and
    /// the round coin came up as this value (threshold coin shares).
    Coin {
        abstain: CompositeSignature,
        coin_shares: Vec<CoinShare>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreVote {
    pub round: u64,
    pub value: bool,
    pub just: PreVoteJust,
    pub share: SignatureShare,
}

/// Why a main-vote is admissible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MainVoteJust {
    /// Combined signature over `n - t` pre-votes for the value this round.
    Value(CompositeSignature),
    /// Two conflicting justified pre-votes from this round.
    Conflict(Box<PreVote>, Box<PreVote>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainVote {
    pub round: u64,
    pub value: MainVal,
    pub just: MainVoteJust,
    pub share: SignatureShare,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbaMsg {
    Init { value: bool, share: SignatureShare },
    PreVote(PreVote),
    MainVote(MainVote),
    Coin { round: u64, share: CoinShare },
}

impl Encode for PreVote {
    fn encode_into(&self, w: &mut Writer) {
        w.u64(self.round).bool(self.value);
        match &self.just {
            PreVoteJust::Backing(shares) => {
                w.u8(0).u32(shares.len() as u32);
                for s in shares {
                    s.encode_into(w);
                }
            }
            PreVoteJust::Hard(c) => {
                w.u8(1);
                c.encode_into(w);
            }
            PreVoteJust::Coin { abstain, coin_shares } => {
                w.u8(2);
                abstain.encode_into(w);
                w.u32(coin_shares.len() as u32);
                for s in coin_shares {
                    s.encode_into(w);
                }
            }
        }
        self.share.encode_into(w);
    }
}

impl Decode for PreVote {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let round = r.u64()?;
        let value = r.bool()?;
        let just = match r.u8()? {
            0 => {
                let len = r.vec_len()?;
                let mut shares = Vec::with_capacity(len.min(64));
                for _ in 0..len {
                    shares.push(SignatureShare::decode_from(r)?);
                }
                PreVoteJust::Backing(shares)
            }
            1 => PreVoteJust::Hard(CompositeSignature::decode_from(r)?),
            2 => {
                let abstain = CompositeSignature::decode_from(r)?;
                let len = r.vec_len()?;
                let mut coin_shares = Vec::with_capacity(len.min(64));
                for _ in 0..len {
                    coin_shares.push(CoinShare::decode_from(r)?);
                }
                PreVoteJust::Coin { abstain, coin_shares }
            }
            d => return Err(WireError::BadDiscriminant(d, "PreVoteJust")),
        };
        Ok(PreVote {
            round,
            value,
            just,
            share: SignatureShare::decode_from(r)?,
        })
    }
}

impl Encode for MainVote {
    fn encode_into(&self, w: &mut Writer) {
        w.u64(self.round).u8(self.value.wire());
        match &self.just {
            MainVoteJust::Value(c) => {
                w.u8(0);
                c.encode_into(w);
            }
            MainVoteJust::Conflict(a, b) => {
                w.u8(1);
                a.encode_into(w);
                b.encode_into(w);
            }
        }
        self.share.encode_into(w);
    }
}

impl Decode for MainVote {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let round = r.u64()?;
        let value = MainVal::from_wire(r.u8()?)?;
        let just = match r.u8()? {
            0 => MainVoteJust::Value(CompositeSignature::decode_from(r)?),
            1 => MainVoteJust::Conflict(
                Box::new(PreVote::decode_from(r)?),
                Box::new(PreVote::decode_from(r)?),
            ),
            d => return Err(WireError::BadDiscriminant(d, "MainVoteJust")),
        };
        Ok(MainVote {
            round,
            value,
            just,
            share: SignatureShare::decode_from(r)?,
        })
    }
}

impl Encode for AbaMsg {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            AbaMsg::Init { value, share } => {
                w.u8(0).bool(*value);
                share.encode_into(w);
            }
            AbaMsg::PreVote(pv) => {
                w.u8(1);
                pv.encode_into(w);
            }
            AbaMsg::MainVote(mv) => {
                w.u8(2);
                mv.encode_into(w);
            }
            AbaMsg::Coin { round, share } => {
                w.u8(3).u64(*round);
                share.encode_into(w);
            }
        }
    }
}

impl Decode for AbaMsg {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            0 => Ok(AbaMsg::Init {
                value: r.bool()?,
                share: SignatureShare::decode_from(r)?,
            }),
            1 => Ok(AbaMsg::PreVote(PreVote::decode_from(r)?)),
            2 => Ok(AbaMsg::MainVote(MainVote::decode_from(r)?)),
            3 => Ok(AbaMsg::Coin {
                round: r.u64()?,
                share: CoinShare::decode_from(r)?,
            }),
            d => Err(WireError::BadDiscriminant(d, "AbaMsg")),
        }
    }
}

// ---- session ----------------------------------------------------------------

/// Key material one party holds for an agreement instance: a signing share
/// in the `n - t` vote dealing and a share in the independent `t + 1` coin
/// dealing.
#[derive(Debug, Clone)]
pub struct AbaKeys {
    pub vks: VerificationKeySet,
    pub sig_key: SigningKeyShare,
    pub coin: CoinScheme,
    pub coin_key: SigningKeyShare,
}

/// Where an emitted message should go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    All,
    /// Party indices (1-based share indices).
    Only(Vec<u32>),
}

/// Session outputs: messages to route plus local events for tracing.
#[derive(Debug, Default)]
pub struct AbaOutput {
    pub messages: Vec<(Targets, AbaMsg)>,
    pub decided: Option<bool>,
    pub flags: Vec<String>,
    pub phases: Vec<String>,
}

#[derive(Debug, Default)]
struct RoundStore {
    prevote_sender_value: BTreeMap<u32, bool>,
    prevote_banned: BTreeSet<u32>,
    prevote_shares: [BTreeMap<u32, SignatureShare>; 2],
    prevote_repr: [Option<PreVote>; 2],
    mainvote_sender_value: BTreeMap<u32, MainVal>,
    mainvote_banned: BTreeSet<u32>,
    mainvote_shares: BTreeMap<u8, BTreeMap<u32, SignatureShare>>,
    /// Pre-vote composites extracted from value main-votes; these justify
    /// the next round's hard pre-vote.
    value_composite: [Option<CompositeSignature>; 2],
    coin_shares: BTreeMap<u32, CoinShare>,
    prevote_sent: bool,
    mainvote_sent: bool,
    coin_sent: bool,
}

/// Behavioral corruption hooks. `None` is honest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbaBehavior {
    Honest,
    /// Send conflicting inits and round-1 pre-votes to the two halves of
    /// the roster, and starve a pseudo-random half elsewhere.
    Equivocate,
}

/// Per-decision agreement state machine for one party.
pub struct AbaSession {
    pub instance: String,
    n: u32,
    t: u32,
    my_index: u32,
    keys: AbaKeys,
    behavior: AbaBehavior,
    input: Option<bool>,
    started: bool,
    round: u64,
    rounds: BTreeMap<u64, RoundStore>,
    init_shares: [BTreeMap<u32, SignatureShare>; 2],
    init_seen: BTreeSet<(u32, bool)>,
    decision: Option<bool>,
    decided_round: u64,
}

impl AbaSession {
    pub fn new(
        instance: &str,
        n: u32,
        t: u32,
        my_index: u32,
        keys: AbaKeys,
        behavior: AbaBehavior,
    ) -> Self {
        assert!(n >= 3 * t + 1, "need n >= 3t + 1");
        AbaSession {
            instance: instance.to_string(),
            n,
            t,
            my_index,
            keys,
            behavior,
            input: None,
            started: false,
            round: 1,
            rounds: BTreeMap::new(),
            init_shares: [BTreeMap::new(), BTreeMap::new()],
            init_seen: BTreeSet::new(),
            decision: None,
            decided_round: 0,
        }
    }

    pub fn decision(&self) -> Option<bool> {
        self.decision
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn quorum(&self) -> usize {
        (self.n - self.t) as usize
    }

    fn backing(&self) -> usize {
        (self.t + 1) as usize
    }

    /// Feed the party's input; idempotent — a second call is rejected.
    pub fn start(&mut self, input: bool) -> Result<AbaOutput, &'static str> {
        if self.started {
            return Err("instance already started");
        }
        self.started = true;
        self.input = Some(input);
        let mut out = AbaOutput::default();
        match self.behavior {
            AbaBehavior::Honest => {
                let share = ts_sign_share(
                    &init_body(&self.instance, input),
                    &self.keys.sig_key,
                    &self.keys.vks,
                )
                .expect("own key belongs to the dealing");
                let msg = AbaMsg::Init { value: input, share };
                self.absorb_own(&msg);
                out.messages.push((Targets::All, msg));
            }
            AbaBehavior::Equivocate => {
                // sign both inits, send one to each half
                for (value, targets) in [(input, self.half(0)), (!input, self.half(1))] {
                    let share = ts_sign_share(
                        &init_body(&self.instance, value),
                        &self.keys.sig_key,
                        &self.keys.vks,
                    )
                    .expect("own key");
                    let msg = AbaMsg::Init { value, share };
                    if value == input {
                        self.absorb_own(&msg);
                    }
                    out.messages.push((Targets::Only(targets), msg));
                }
            }
        }
        self.progress(&mut out);
        Ok(out)
    }

    fn half(&self, which: usize) -> Vec<u32> {
        (1..=self.n)
            .filter(|i| *i != self.my_index && (*i as usize) % 2 == which)
            .collect()
    }

    /// Store one of our own messages as if received.
    fn absorb_own(&mut self, msg: &AbaMsg) {
        let mut scratch = AbaOutput::default();
        self.store_valid(self.my_index, msg.clone(), &mut scratch);
    }

    /// Handle a message from `sender_index`. Invalid messages are dropped
    /// and flagged; valid ones are stored and the state machine advances.
    pub fn handle(&mut self, sender_index: u32, msg: AbaMsg) -> AbaOutput {
        let mut out = AbaOutput::default();
        if sender_index == 0 || sender_index > self.n {
            out.flags.push(format!("unknown sender index {sender_index}"));
            return out;
        }
        if !self.validate(sender_index, &msg, &mut out) {
            return out;
        }
        self.store_valid(sender_index, msg, &mut out);
        if self.started {
            self.progress(&mut out);
        }
        out
    }

    // ---- validation ---------------------------------------------------------

    fn verify_vote_share(&self, body: &[u8], share: &SignatureShare, sender: u32) -> bool {
        share.index == sender && ts_verify_share(body, share, &self.keys.vks)
    }

    fn validate(&self, sender: u32, msg: &AbaMsg, out: &mut AbaOutput) -> bool {
        let ok = match msg {
            AbaMsg::Init { value, share } => {
                self.verify_vote_share(&init_body(&self.instance, *value), share, sender)
            }
            AbaMsg::PreVote(pv) => self.validate_prevote(sender, pv),
            AbaMsg::MainVote(mv) => self.validate_mainvote(sender, mv),
            AbaMsg::Coin { round, share } => {
                share.index == sender
                    && share.coin_name == aba_coin_name(&self.instance, *round)
                    && coin_verify_share(share, &self.keys.coin)
            }
        };
        if !ok {
            out.flags
                .push(format!("invalid message from index {sender} dropped"));
        }
        ok
    }

    fn validate_prevote(&self, sender: u32, pv: &PreVote) -> bool {
        if pv.round == 0 || pv.round > ROUND_CAP {
            return false;
        }
        let body = prevote_body(&self.instance, pv.round, pv.value);
        if !self.verify_vote_share(&body, &pv.share, sender) {
            return false;
        }
        match &pv.just {
            PreVoteJust::Backing(shares) => {
                if pv.round != 1 {
                    return false;
                }
                let body = init_body(&self.instance, pv.value);
                let mut indices = BTreeSet::new();
                for s in shares {
                    if !ts_verify_share(&body, s, &self.keys.vks) {
                        return false;
                    }
                    indices.insert(s.index);
                }
                indices.len() >= self.backing()
            }
            PreVoteJust::Hard(composite) => {
                if pv.round < 2 {
                    return false;
                }
                let prev = prevote_body(&self.instance, pv.round - 1, pv.value);
                ts_verify(&prev, composite, &self.keys.vks)
            }
            PreVoteJust::Coin { abstain, coin_shares } => {
                if pv.round < 2 {
                    return false;
                }
                let abstain_body =
                    mainvote_body(&self.instance, pv.round - 1, MainVal::Abstain);
                if !ts_verify(&abstain_body, abstain, &self.keys.vks) {
                    return false;
                }
                let name = aba_coin_name(&self.instance, pv.round - 1);
                let mut indices = BTreeSet::new();
                for s in coin_shares {
                    if s.coin_name != name || !coin_verify_share(s, &self.keys.coin) {
                        return false;
                    }
                    indices.insert(s.index);
                }
                if indices.len() < self.keys.coin.threshold() {
                    return false;
                }
                match coin_combine(&name, coin_shares, &self.keys.coin) {
                    Ok(bit) => bit == pv.value,
                    Err(_) => false,
                }
            }
        }
    }

    fn validate_mainvote(&self, sender: u32, mv: &MainVote) -> bool {
        if mv.round == 0 || mv.round > ROUND_CAP {
            return false;
        }
        let body = mainvote_body(&self.instance, mv.round, mv.value);
        if !self.verify_vote_share(&body, &mv.share, sender) {
            return false;
        }
        match (&mv.just, mv.value) {
            (MainVoteJust::Value(composite), MainVal::Zero | MainVal::One) => {
                let b = mv.value.bit().expect("value mainvote");
                let prev = prevote_body(&self.instance, mv.round, b);
                ts_verify(&prev, composite, &self.keys.vks)
            }
            (MainVoteJust::Conflict(a, b), MainVal::Abstain) => {
                a.round == mv.round
                    && b.round == mv.round
                    && a.value != b.value
                    && self.validate_prevote(a.share.index, a)
                    && self.validate_prevote(b.share.index, b)
            }
            _ => false,
        }
    }

    // ---- storage with duplicate / equivocation handling ----------------------

    fn store_valid(&mut self, sender: u32, msg: AbaMsg, out: &mut AbaOutput) {
        match msg {
            AbaMsg::Init { value, share } => {
                if self.init_seen.insert((sender, value)) {
                    self.init_shares[usize::from(value)].insert(sender, share);
                }
            }
            AbaMsg::PreVote(pv) => {
                let round = pv.round;
                let store = self.rounds.entry(round).or_default();
                if store.prevote_banned.contains(&sender) {
                    return;
                }
                match store.prevote_sender_value.get(&sender) {
                    None => {
                        let slot = usize::from(pv.value);
                        store.prevote_sender_value.insert(sender, pv.value);
                        store.prevote_shares[slot].insert(sender, pv.share.clone());
                        if store.prevote_repr[slot].is_none() {
                            store.prevote_repr[slot] = Some(pv);
                        }
                    }
                    Some(prev) if *prev == pv.value => {} // duplicate, ignore
                    Some(prev) => {
                        // conflicting pre-votes: drop both, ban the sender
                        let old = *prev;
                        store.prevote_sender_value.remove(&sender);
                        store.prevote_shares[usize::from(old)].remove(&sender);
                        store.prevote_banned.insert(sender);
                        out.flags.push(format!(
                            "equivocating pre-votes from index {sender} round {round}; both dropped"
                        ));
                    }
                }
            }
            AbaMsg::MainVote(mv) => {
                let round = mv.round;
                let store = self.rounds.entry(round).or_default();
                if store.mainvote_banned.contains(&sender) {
                    return;
                }
                match store.mainvote_sender_value.get(&sender) {
                    None => {
                        store.mainvote_sender_value.insert(sender, mv.value);
                        store
                            .mainvote_shares
                            .entry(mv.value.wire())
                            .or_default()
                            .insert(sender, mv.share.clone());
                        if let (MainVoteJust::Value(c), Some(b)) = (&mv.just, mv.value.bit()) {
                            if store.value_composite[usize::from(b)].is_none() {
                                store.value_composite[usize::from(b)] = Some(c.clone());
                            }
                        }
                    }
                    Some(prev) if *prev == mv.value => {}
                    Some(prev) => {
                        let old = prev.wire();
                        store.mainvote_sender_value.remove(&sender);
                        if let Some(m) = store.mainvote_shares.get_mut(&old) {
                            m.remove(&sender);
                        }
                        store.mainvote_banned.insert(sender);
                        out.flags.push(format!(
                            "equivocating main-votes from index {sender} round {round}; both dropped"
                        ));
                    }
                }
            }
            AbaMsg::Coin { round, share } => {
                let store = self.rounds.entry(round).or_default();
                store.coin_shares.entry(share.index).or_insert(share);
            }
        }
    }

    // ---- the state machine ---------------------------------------------------

    /// True while the session should still emit messages: undecided, or
    /// within one round of the decision so peers can finish.
    fn speaking(&self, round: u64) -> bool {
        if round > ROUND_CAP {
            return false;
        }
        self.decision.is_none() || round <= self.decided_round + 1
    }

    fn progress(&mut self, out: &mut AbaOutput) {
        loop {
            let mut advanced = false;

            // round-1 pre-vote once a value is admissible
            if !self.rounds.entry(1).or_default().prevote_sent {
                if let Some((value, backing)) = self.pick_round1_value() {
                    self.emit_prevote(1, value, PreVoteJust::Backing(backing), out);
                    advanced = true;
                }
            }

            // emission duties apply to every round we have passed through,
            // not just the current one: a quorum that completes late must
            // still produce our vote or stragglers starve
            let quorum = self.quorum();
            for round in 1..=self.round {
                if self.try_emit_mainvote_for(round, out) {
                    advanced = true;
                }
                let store = self.rounds.entry(round).or_default();
                if store.mainvote_sender_value.len() >= quorum && !store.coin_sent {
                    // release our coin share for this round unconditionally;
                    // whoever needs the coin can then combine
                    store.coin_sent = true;
                    if self.speaking(round) {
                        let name = aba_coin_name(&self.instance, round);
                        let share = coin_share(&name, &self.keys.coin_key, &self.keys.coin)
                            .expect("own coin key");
                        let msg = AbaMsg::Coin { round, share };
                        self.absorb_own(&msg);
                        out.messages.push((Targets::All, msg));
                    }
                    advanced = true;
                }
            }

            // decision and advancement happen at the current round
            let round = self.round;
            let store = self.rounds.entry(round).or_default();
            if store.mainvote_sender_value.len() >= quorum {
                let store = self.rounds.entry(round).or_default();
                let zeros = store
                    .mainvote_shares
                    .get(&MainVal::Zero.wire())
                    .map_or(0, BTreeMap::len);
                let ones = store
                    .mainvote_shares
                    .get(&MainVal::One.wire())
                    .map_or(0, BTreeMap::len);
                let abstains = store
                    .mainvote_shares
                    .get(&MainVal::Abstain.wire())
                    .map_or(0, BTreeMap::len);
                let total = store.mainvote_sender_value.len();

                let value_bit = if ones > 0 {
                    Some(true)
                } else if zeros > 0 {
                    Some(false)
                } else {
                    None
                };
                if zeros > 0 && ones > 0 {
                    // justified main-votes for both values would need an
                    // honest double pre-voter; flag loudly if it ever shows
                    out.flags
                        .push(format!("conflicting value main-votes in round {round}"));
                }

                match value_bit {
                    Some(b) if abstains == 0 && total >= quorum => {
                        // unanimous value: decide
                        if self.decision.is_none() {
                            self.decision = Some(b);
                            self.decided_round = round;
                            out.decided = Some(b);
                            out.phases.push(format!("decided round {round}"));
                        }
                        if self.try_advance_with_value(round, b, out) {
                            advanced = true;
                        }
                    }
                    Some(b) => {
                        if self.try_advance_with_value(round, b, out) {
                            advanced = true;
                        }
                    }
                    None => {
                        // all abstain: wait for the round coin
                        if self.try_advance_with_coin(round, out) {
                            advanced = true;
                        }
                    }
                }
            }

            if !advanced {
                break;
            }
        }
    }

    /// Emit the main-vote for `round` once its pre-vote quorum exists.
    fn try_emit_mainvote_for(&mut self, round: u64, out: &mut AbaOutput) -> bool {
        let quorum = self.quorum();
        let store = self.rounds.entry(round).or_default();
        if store.mainvote_sent || store.prevote_sender_value.len() < quorum {
            return false;
        }
        let zeros = store.prevote_shares[0].len();
        let ones = store.prevote_shares[1].len();
        let (value, just) = if zeros > 0 && ones > 0 {
            let a = store.prevote_repr[0].clone().expect("stored repr");
            let b = store.prevote_repr[1].clone().expect("stored repr");
            (
                MainVal::Abstain,
                MainVoteJust::Conflict(Box::new(a), Box::new(b)),
            )
        } else {
            let bit = ones > 0;
            let shares: Vec<SignatureShare> =
                store.prevote_shares[usize::from(bit)].values().cloned().collect();
            let body = prevote_body(&self.instance, round, bit);
            match ts_combine(&body, &shares, &self.keys.vks) {
                Ok(composite) => (MainVal::from_bit(bit), MainVoteJust::Value(composite)),
                // below combine threshold despite quorum count — can only
                // happen transiently after a ban
                Err(_) => return false,
            }
        };
        self.emit_mainvote(round, value, just, out);
        true
    }

    fn pick_round1_value(&mut self) -> Option<(bool, Vec<SignatureShare>)> {
        let input = self.input?;
        let total = self.init_seen.len();
        let have = |v: bool| self.init_shares[usize::from(v)].len() >= self.backing();
        // before the init quorum arrives, only our own preference counts
        if total < self.quorum() {
            return None;
        }
        let value = if have(input) {
            input
        } else if have(!input) {
            !input
        } else {
            return None;
        };
        let backing: Vec<SignatureShare> = self.init_shares[usize::from(value)]
            .values()
            .take(self.backing())
            .cloned()
            .collect();
        Some((value, backing))
    }

    fn try_advance_with_value(&mut self, round: u64, value: bool, out: &mut AbaOutput) -> bool {
        let next = round + 1;
        if self.round != round || self.rounds.entry(next).or_default().prevote_sent {
            // still move the round pointer forward if we already pre-voted
            if self.round == round && self.rounds.entry(next).or_default().prevote_sent {
                self.round = next;
                return true;
            }
            return false;
        }
        let composite = self.rounds.entry(round).or_default().value_composite
            [usize::from(value)]
        .clone();
        let Some(composite) = composite else {
            return false;
        };
        self.emit_prevote(next, value, PreVoteJust::Hard(composite), out);
        self.round = next;
        out.phases.push(format!("enter round {next}"));
        true
    }

    fn try_advance_with_coin(&mut self, round: u64, out: &mut AbaOutput) -> bool {
        let next = round + 1;
        if self.round != round || self.rounds.entry(next).or_default().prevote_sent {
            if self.round == round && self.rounds.entry(next).or_default().prevote_sent {
                self.round = next;
                return true;
            }
            return false;
        }
        let coin_k = self.keys.coin.threshold();
        let store = self.rounds.entry(round).or_default();
        if store.coin_shares.len() < coin_k {
            return false;
        }
        let abstain_shares: Vec<SignatureShare> = store
            .mainvote_shares
            .get(&MainVal::Abstain.wire())
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default();
        let coin_shares: Vec<CoinShare> =
            store.coin_shares.values().take(coin_k).cloned().collect();
        let name = aba_coin_name(&self.instance, round);
        let abstain_body = mainvote_body(&self.instance, round, MainVal::Abstain);
        let Ok(abstain) = ts_combine(&abstain_body, &abstain_shares, &self.keys.vks) else {
            return false;
        };
        let Ok(bit) = coin_combine(&name, &coin_shares, &self.keys.coin) else {
            return false;
        };
        self.emit_prevote(next, bit, PreVoteJust::Coin { abstain, coin_shares }, out);
        self.round = next;
        out.phases.push(format!("enter round {next} via coin"));
        true
    }

    fn emit_prevote(&mut self, round: u64, value: bool, just: PreVoteJust, out: &mut AbaOutput) {
        {
            let store = self.rounds.entry(round).or_default();
            if store.prevote_sent {
                return;
            }
            store.prevote_sent = true;
        }
        if !self.speaking(round) {
            return;
        }
        let share = ts_sign_share(
            &prevote_body(&self.instance, round, value),
            &self.keys.sig_key,
            &self.keys.vks,
        )
        .expect("own key");
        let pv = PreVote { round, value, just, share };

        if self.behavior == AbaBehavior::Equivocate && round == 1 {
            // a round-1 pre-vote for the other value is forgeable only if
            // it has enough init backing
            let alt_value = !value;
            let alt_backing: Vec<SignatureShare> = self.init_shares[usize::from(alt_value)]
                .values()
                .take(self.backing())
                .cloned()
                .collect();
            if alt_backing.len() >= self.backing() {
                let alt_share = ts_sign_share(
                    &prevote_body(&self.instance, round, alt_value),
                    &self.keys.sig_key,
                    &self.keys.vks,
                )
                .expect("own key");
                let alt = PreVote {
                    round,
                    value: alt_value,
                    just: PreVoteJust::Backing(alt_backing),
                    share: alt_share,
                };
                let msg = AbaMsg::PreVote(pv);
                self.absorb_own(&msg);
                out.messages.push((Targets::Only(self.half(0)), msg));
                out.messages
                    .push((Targets::Only(self.half(1)), AbaMsg::PreVote(alt)));
                return;
            }
            // cannot forge: starve one half instead
            let msg = AbaMsg::PreVote(pv);
            self.absorb_own(&msg);
            out.messages.push((Targets::Only(self.half(0)), msg));
            return;
        }

        let msg = AbaMsg::PreVote(pv);
        self.absorb_own(&msg);
        if self.behavior == AbaBehavior::Equivocate {
            out.messages.push((Targets::Only(self.starve_half(round)), msg));
        } else {
            out.messages.push((Targets::All, msg));
        }
    }

    fn emit_mainvote(&mut self, round: u64, value: MainVal, just: MainVoteJust, out: &mut AbaOutput) {
        {
            let store = self.rounds.entry(round).or_default();
            if store.mainvote_sent {
                return;
            }
            store.mainvote_sent = true;
        }
        if !self.speaking(round) {
            return;
        }
        let share = ts_sign_share(
            &mainvote_body(&self.instance, round, value),
            &self.keys.sig_key,
            &self.keys.vks,
        )
        .expect("own key");
        let mv = MainVote { round, value, just, share };
        let msg = AbaMsg::MainVote(mv);
        self.absorb_own(&msg);
        if self.behavior == AbaBehavior::Equivocate {
            out.messages.push((Targets::Only(self.starve_half(round)), msg));
        } else {
            out.messages.push((Targets::All, msg));
        }
    }

    /// Rotating half of the roster an equivocator keeps talking to.
    fn starve_half(&self, round: u64) -> Vec<u32> {
        let which = (round % 2) as usize;
        self.half(which)
    }
}
