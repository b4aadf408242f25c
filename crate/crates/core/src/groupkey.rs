//! Conference key agreement with malicious-contribution filtering.
//!
//! Members exchange pairwise-encrypted nonces (long-term Diffie-Hellman
//! pairs provide the channels), echo digests of what they decrypted, and
//! confirm a hash of the whole echo transcript. A member survives filtering
//! only if every echo agrees on its nonce digest and matches its public
//! commitment, so sending different nonces to different recipients is
//! detected and the sender excluded. Survivors then run a second exchange
//! among themselves; the master key is derived from those second-round
//! nonces, which never travel to excluded members under any key they hold.
//!
//! The master key never encrypts payload traffic. Session keys are one-way
//! derivations from it, and key material is wiped on drop.

use std::collections::BTreeMap;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::group::{GroupElement, GroupParams, Scalar};
use crate::symmetric::{kdf, open, seal, SecretBytes, KEY_LEN};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

/// Marker digest an echo uses for a contribution it could not decrypt or
/// whose commitment did not match.
const INVALID_MARK: [u8; 32] = [0xff; 32];

/// Long-term Diffie-Hellman identity of one party plus everyone's public
/// keys; pairwise symmetric keys fall out of it.
#[derive(Debug, Clone)]
pub struct LongTermKeys {
    pub params: GroupParams,
    pub my_index: u32,
    pub secret: Scalar,
    pub publics: BTreeMap<u32, GroupElement>,
}

impl LongTermKeys {
    pub fn generate(
        params: &GroupParams,
        indices: &[u32],
        rng: &mut impl RngCore,
    ) -> BTreeMap<u32, LongTermKeys> {
        let secrets: BTreeMap<u32, Scalar> = indices
            .iter()
            .map(|&i| (i, params.scalar_random(rng)))
            .collect();
        let publics: BTreeMap<u32, GroupElement> = secrets
            .iter()
            .map(|(&i, s)| (i, params.g_pow(s)))
            .collect();
        secrets
            .into_iter()
            .map(|(i, secret)| {
                (
                    i,
                    LongTermKeys {
                        params: params.clone(),
                        my_index: i,
                        secret,
                        publics: publics.clone(),
                    },
                )
            })
            .collect()
    }

    /// Symmetric key shared with `other`: KDF over g^(x_i * x_j).
    pub fn pairwise(&self, other: u32) -> [u8; KEY_LEN] {
        let their_pub = &self.publics[&other];
        let shared = self.params.pow(their_pub, &self.secret);
        let (lo, hi) = if self.my_index < other {
            (self.my_index, other)
        } else {
            (other, self.my_index)
        };
        kdf(
            "gk-pairwise",
            &[
                &shared.value().to_bytes_be(),
                &lo.to_be_bytes(),
                &hi.to_be_bytes(),
            ],
        )
    }
}

/// Conference master key; used only to derive session keys.
pub struct MasterKey {
    pub derivation_label: String,
    key: SecretBytes,
}

impl MasterKey {
    pub fn from_bytes(label: &str, bytes: [u8; KEY_LEN]) -> Self {
        MasterKey {
            derivation_label: label.to_string(),
            key: SecretBytes::new(bytes),
        }
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        self.key.expose()
    }
}

/// Payload-traffic key for one session.
pub struct SessionKey {
    pub derivation_label: String,
    key: SecretBytes,
}

impl SessionKey {
    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        self.key.expose()
    }
}

/// One-way derivation of a session key. Distinct session ids give
/// unrelated keys; nothing here can run backwards to the master.
pub fn gk_session_key(master: &MasterKey, session_id: &str, fresh_nonces: &[u8]) -> SessionKey {
    let key = kdf(
        "gk-session",
        &[master.bytes(), session_id.as_bytes(), fresh_nonces],
    );
    SessionKey {
        derivation_label: format!("session:{session_id}"),
        key: SecretBytes::new(key),
    }
}

/// Payload encryption accepts only session keys — master keys do not fit
/// this signature, which is the master/session separation, enforced by type.
pub fn seal_payload(key: &SessionKey, nonce: &[u8], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    seal(key.bytes(), nonce, aad, plaintext)
}

pub fn open_payload(
    key: &SessionKey,
    nonce: &[u8],
    aad: &[u8],
    sealed: &[u8],
) -> Result<Vec<u8>, crate::symmetric::SealError> {
    open(key.bytes(), nonce, aad, sealed)
}

// ---- messages ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GkMsg {
    Contribute {
        session: String,
        phase: u8,
        commitment: [u8; 32],
        ciphertexts: BTreeMap<u32, Vec<u8>>,
    },
    Echo {
        session: String,
        phase: u8,
        digests: BTreeMap<u32, [u8; 32]>,
    },
    Confirm {
        session: String,
        phase: u8,
        transcript: [u8; 32],
    },
}

impl GkMsg {
    pub fn session(&self) -> &str {
        match self {
            GkMsg::Contribute { session, .. }
            | GkMsg::Echo { session, .. }
            | GkMsg::Confirm { session, .. } => session,
        }
    }
}

impl Encode for GkMsg {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            GkMsg::Contribute { session, phase, commitment, ciphertexts } => {
                w.u8(0).str(session).u8(*phase).raw(commitment);
                w.u32(ciphertexts.len() as u32);
                for (recipient, ct) in ciphertexts {
                    w.u32(*recipient).bytes(ct);
                }
            }
            GkMsg::Echo { session, phase, digests } => {
                w.u8(1).str(session).u8(*phase);
                w.u32(digests.len() as u32);
                for (sender, digest) in digests {
                    w.u32(*sender).raw(digest);
                }
            }
            GkMsg::Confirm { session, phase, transcript } => {
                w.u8(2).str(session).u8(*phase).raw(transcript);
            }
        }
    }
}

impl Decode for GkMsg {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match r.u8()? {
            0 => {
                let session = r.str()?.to_string();
                let phase = r.u8()?;
                let mut commitment = [0u8; 32];
                commitment.copy_from_slice(r.raw(32)?);
                let len = r.vec_len()?;
                let mut ciphertexts = BTreeMap::new();
                for _ in 0..len {
                    let recipient = r.u32()?;
                    let ct = r.bytes()?.to_vec();
                    if ciphertexts.insert(recipient, ct).is_some() {
                        return Err(WireError::Invalid("duplicate recipient"));
                    }
                }
                GkMsg::Contribute { session, phase, commitment, ciphertexts }
            }
            1 => {
                let session = r.str()?.to_string();
                let phase = r.u8()?;
                let len = r.vec_len()?;
                let mut digests = BTreeMap::new();
                for _ in 0..len {
                    let sender = r.u32()?;
                    let mut digest = [0u8; 32];
                    digest.copy_from_slice(r.raw(32)?);
                    if digests.insert(sender, digest).is_some() {
                        return Err(WireError::Invalid("duplicate sender"));
                    }
                }
                GkMsg::Echo { session, phase, digests }
            }
            2 => {
                let session = r.str()?.to_string();
                let phase = r.u8()?;
                let mut transcript = [0u8; 32];
                transcript.copy_from_slice(r.raw(32)?);
                GkMsg::Confirm { session, phase, transcript }
            }
            d => return Err(WireError::BadDiscriminant(d, "GkMsg")),
        })
    }
}

// ---- session ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkStatus {
    Collecting,
    Echoing,
    Filtered,
    Established,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkBehavior {
    Honest,
    /// Send one nonce to the lower half of the roster and a different one
    /// to the upper half.
    EquivocateNonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GkEvent {
    Excluded { member: u32 },
    Established,
    Aborted { reason: String },
    Flag(String),
}

#[derive(Debug, Default)]
pub struct GkOutput {
    /// (recipients, message)
    pub messages: Vec<(Vec<u32>, GkMsg)>,
    pub events: Vec<GkEvent>,
}

struct PhaseState {
    roster: Vec<u32>,
    my_nonce: [u8; 32],
    commitments: BTreeMap<u32, [u8; 32]>,
    decrypted: BTreeMap<u32, Option<[u8; 32]>>,
    echoes: BTreeMap<u32, BTreeMap<u32, [u8; 32]>>,
    confirms: BTreeMap<u32, [u8; 32]>,
    echo_sent: bool,
    confirm_sent: bool,
    done: bool,
}

impl PhaseState {
    fn new(roster: Vec<u32>) -> Self {
        PhaseState {
            roster,
            my_nonce: [0; 32],
            commitments: BTreeMap::new(),
            decrypted: BTreeMap::new(),
            echoes: BTreeMap::new(),
            confirms: BTreeMap::new(),
            echo_sent: false,
            confirm_sent: false,
            done: false,
        }
    }
}

fn commit_nonce(nonce: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"gk-commit");
    h.update(nonce);
    h.finalize().into()
}

fn echo_digest(nonce: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"gk-echo");
    h.update(nonce);
    h.finalize().into()
}

/// One member's view of a key agreement session.
pub struct GroupKeySession {
    pub session_id: String,
    members: Vec<u32>,
    lt: LongTermKeys,
    behavior: GkBehavior,
    status: GkStatus,
    phases: [Option<PhaseState>; 2],
    /// Messages for a phase we have not opened yet (fast peers finish
    /// filtering before slow ones); replayed when the phase opens.
    pending: Vec<(u32, GkMsg)>,
    master: Option<MasterKey>,
    survivors: Vec<u32>,
}

impl GroupKeySession {
    pub fn new(session_id: &str, members: Vec<u32>, lt: LongTermKeys, behavior: GkBehavior) -> Self {
        assert!(members.contains(&lt.my_index));
        GroupKeySession {
            session_id: session_id.to_string(),
            members,
            lt,
            behavior,
            status: GkStatus::Collecting,
            phases: [None, None],
            pending: Vec::new(),
            master: None,
            survivors: Vec::new(),
        }
    }

    pub fn status(&self) -> GkStatus {
        self.status
    }

    pub fn master(&self) -> Option<&MasterKey> {
        self.master.as_ref()
    }

    pub fn survivors(&self) -> &[u32] {
        &self.survivors
    }

    /// Kick off phase 0 (the filtering exchange).
    pub fn start(&mut self, rng: &mut impl RngCore) -> GkOutput {
        let mut out = GkOutput::default();
        if self.members.len() == 1 {
            // degenerate single-member session: key over own nonce
            let mut nonce = [0u8; 32];
            rng.fill_bytes(&mut nonce);
            let key = kdf("gk-master", &[self.session_id.as_bytes(), &nonce]);
            self.master = Some(MasterKey {
                derivation_label: format!("master:{}", self.session_id),
                key: SecretBytes::new(key),
            });
            self.survivors = self.members.clone();
            self.status = GkStatus::Established;
            out.events.push(GkEvent::Established);
            return out;
        }
        self.begin_phase(0, self.members.clone(), rng, &mut out);
        out
    }

    fn begin_phase(&mut self, phase: u8, roster: Vec<u32>, rng: &mut impl RngCore, out: &mut GkOutput) {
        let mut state = PhaseState::new(roster.clone());
        rng.fill_bytes(&mut state.my_nonce);

        match self.behavior {
            GkBehavior::Honest => {
                let commitment = commit_nonce(&state.my_nonce);
                let ciphertexts = self.encrypt_to(&roster, phase, &state.my_nonce, &commitment);
                state.commitments.insert(self.lt.my_index, commitment);
                state
                    .decrypted
                    .insert(self.lt.my_index, Some(state.my_nonce));
                out.messages.push((
                    roster.iter().copied().filter(|&m| m != self.lt.my_index).collect(),
                    GkMsg::Contribute {
                        session: self.session_id.clone(),
                        phase,
                        commitment,
                        ciphertexts,
                    },
                ));
            }
            GkBehavior::EquivocateNonce => {
                // nonce A committed; half the recipients get nonce B
                let mut other = state.my_nonce;
                other[0] ^= 0x55;
                let commitment = commit_nonce(&state.my_nonce);
                let mid = roster.len() / 2;
                let mut ciphertexts = BTreeMap::new();
                for (pos, &m) in roster.iter().enumerate() {
                    if m == self.lt.my_index {
                        continue;
                    }
                    let nonce = if pos < mid { state.my_nonce } else { other };
                    ciphertexts.insert(
                        m,
                        self.encrypt_one(m, phase, &nonce, &commitment),
                    );
                }
                state.commitments.insert(self.lt.my_index, commitment);
                state
                    .decrypted
                    .insert(self.lt.my_index, Some(state.my_nonce));
                out.messages.push((
                    roster.iter().copied().filter(|&m| m != self.lt.my_index).collect(),
                    GkMsg::Contribute {
                        session: self.session_id.clone(),
                        phase,
                        commitment,
                        ciphertexts,
                    },
                ));
            }
        }
        self.phases[usize::from(phase)] = Some(state);
        self.try_progress(phase, out);
        // replay anything that arrived before this phase opened
        let pending = std::mem::take(&mut self.pending);
        for (sender, msg) in pending {
            let replayed = self.handle(sender, msg);
            out.messages.extend(replayed.messages);
            out.events.extend(replayed.events);
        }
    }

    fn seal_nonce_ident(&self, phase: u8, from: u32, to: u32) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.session_id).u8(phase).u32(from).u32(to);
        w.finish()
    }

    fn encrypt_one(&self, to: u32, phase: u8, nonce: &[u8; 32], commitment: &[u8; 32]) -> Vec<u8> {
        let key = self.lt.pairwise(to);
        seal(
            &key,
            &self.seal_nonce_ident(phase, self.lt.my_index, to),
            commitment,
            nonce,
        )
    }

    fn encrypt_to(
        &self,
        roster: &[u32],
        phase: u8,
        nonce: &[u8; 32],
        commitment: &[u8; 32],
    ) -> BTreeMap<u32, Vec<u8>> {
        roster
            .iter()
            .filter(|&&m| m != self.lt.my_index)
            .map(|&m| (m, self.encrypt_one(m, phase, nonce, commitment)))
            .collect()
    }

    pub fn handle(&mut self, sender: u32, msg: GkMsg) -> GkOutput {
        let mut out = GkOutput::default();
        if self.status == GkStatus::Aborted || self.status == GkStatus::Established {
            return out;
        }
        let phase_of = match &msg {
            GkMsg::Contribute { phase, .. } | GkMsg::Echo { phase, .. } | GkMsg::Confirm { phase, .. } => *phase,
        };
        if msg.session() != self.session_id || phase_of > 1 {
            return out;
        }
        if self.phases[usize::from(phase_of)].is_none() {
            // not opened locally yet; keep it until filtering finishes
            self.pending.push((sender, msg));
            return out;
        }
        match msg {
            GkMsg::Contribute { session: _, phase, commitment, ciphertexts } => {
                let Some(state) = self.phases[usize::from(phase)].as_mut() else {
                    return out;
                };
                if !state.roster.contains(&sender) || state.commitments.contains_key(&sender) {
                    return out;
                }
                state.commitments.insert(sender, commitment);
                let my_ct = ciphertexts.get(&self.lt.my_index);
                let decrypted = my_ct.and_then(|ct| {
                    let key = self.lt.pairwise(sender);
                    open(
                        &key,
                        &self.seal_nonce_ident(phase, sender, self.lt.my_index),
                        &commitment,
                        ct,
                    )
                    .ok()
                });
                let nonce = decrypted.and_then(|plain| {
                    let arr: Option<[u8; 32]> = plain.try_into().ok();
                    arr.filter(|n| commit_nonce(n) == commitment)
                });
                self.phases[usize::from(phase)]
                    .as_mut()
                    .unwrap()
                    .decrypted
                    .insert(sender, nonce);
                self.try_progress(phase, &mut out);
            }
            GkMsg::Echo { session: _, phase, digests } => {
                let Some(state) = self.phases[usize::from(phase)].as_mut() else {
                    return out;
                };
                if !state.roster.contains(&sender) || state.echoes.contains_key(&sender) {
                    return out;
                }
                state.echoes.insert(sender, digests);
                self.try_progress(phase, &mut out);
            }
            GkMsg::Confirm { session: _, phase, transcript } => {
                let Some(state) = self.phases[usize::from(phase)].as_mut() else {
                    return out;
                };
                if !state.roster.contains(&sender) || state.confirms.contains_key(&sender) {
                    return out;
                }
                state.confirms.insert(sender, transcript);
                self.try_progress(phase, &mut out);
            }
        }
        out
    }

    fn try_progress(&mut self, phase: u8, out: &mut GkOutput) {
        let session_id = self.session_id.clone();
        let me = self.lt.my_index;
        let Some(state) = self.phases[usize::from(phase)].as_mut() else {
            return;
        };
        if state.done {
            return;
        }
        let roster = state.roster.clone();

        // all contributions in -> echo what we decrypted
        if !state.echo_sent && state.decrypted.len() == roster.len() {
            state.echo_sent = true;
            let digests: BTreeMap<u32, [u8; 32]> = state
                .decrypted
                .iter()
                .map(|(&m, nonce)| (m, nonce.map_or(INVALID_MARK, |n| echo_digest(&n))))
                .collect();
            state.echoes.insert(me, digests.clone());
            out.messages.push((
                roster.iter().copied().filter(|&m| m != me).collect(),
                GkMsg::Echo { session: session_id.clone(), phase, digests },
            ));
        }

        // all echoes in -> confirm the transcript
        if state.echo_sent && !state.confirm_sent && state.echoes.len() == roster.len() {
            state.confirm_sent = true;
            let transcript = transcript_hash(&state.echoes);
            state.confirms.insert(me, transcript);
            out.messages.push((
                roster.iter().copied().filter(|&m| m != me).collect(),
                GkMsg::Confirm { session: session_id.clone(), phase, transcript },
            ));
            if self.status == GkStatus::Collecting {
                self.status = GkStatus::Echoing;
            }
        }

        let Some(state) = self.phases[usize::from(phase)].as_mut() else {
            return;
        };
        // all confirms in -> filter or finish
        if state.confirm_sent && !state.done && state.confirms.len() == roster.len() {
            state.done = true;
            let my_transcript = state.confirms[&me];
            if state.confirms.values().any(|t| *t != my_transcript) {
                self.status = GkStatus::Aborted;
                out.events.push(GkEvent::Aborted {
                    reason: "echo transcripts diverge".to_string(),
                });
                return;
            }
            // unanimous echo agreement per member
            let mut survivors = Vec::new();
            let mut nonces: BTreeMap<u32, [u8; 32]> = BTreeMap::new();
            for &m in &roster {
                let digests: Vec<[u8; 32]> = state
                    .echoes
                    .values()
                    .map(|e| e.get(&m).copied().unwrap_or(INVALID_MARK))
                    .collect();
                let first = digests[0];
                let unanimous = first != INVALID_MARK && digests.iter().all(|d| *d == first);
                if unanimous {
                    survivors.push(m);
                    if let Some(Some(n)) = state.decrypted.get(&m) {
                        nonces.insert(m, *n);
                    }
                } else if phase == 0 {
                    out.events.push(GkEvent::Excluded { member: m });
                }
            }

            if phase == 0 {
                if survivors.len() < 2 {
                    self.status = GkStatus::Aborted;
                    out.events.push(GkEvent::Aborted {
                        reason: format!("{} survivors after filtering", survivors.len()),
                    });
                    return;
                }
                self.status = GkStatus::Filtered;
                self.survivors = survivors.clone();
                if survivors.contains(&me) {
                    // phase 1 nonce comes from a derivation of the phase-0
                    // nonce so no fresh RNG call is needed mid-protocol
                    let seed = kdf(
                        "gk-phase1-nonce",
                        &[&state.my_nonce, session_id.as_bytes()],
                    );
                    let mut fixed = FixedRng { bytes: seed, used: false };
                    self.begin_phase(1, survivors, &mut fixed, out);
                } else {
                    self.status = GkStatus::Aborted;
                    out.events.push(GkEvent::Aborted {
                        reason: "filtered out locally".to_string(),
                    });
                }
            } else {
                // phase 1 complete: any disagreement in the key round is a
                // full abort, never a partial key
                if survivors.len() != roster.len() {
                    self.status = GkStatus::Aborted;
                    out.events.push(GkEvent::Aborted {
                        reason: "key-round contribution mismatch".to_string(),
                    });
                    return;
                }
                let mut parts: Vec<Vec<u8>> = Vec::new();
                parts.push(session_id.as_bytes().to_vec());
                for &m in &roster {
                    parts.push(m.to_be_bytes().to_vec());
                    parts.push(nonces[&m].to_vec());
                }
                let part_refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
                let key = kdf("gk-master", &part_refs);
                self.master = Some(MasterKey {
                    derivation_label: format!("master:{session_id}"),
                    key: SecretBytes::new(key),
                });
                self.status = GkStatus::Established;
                out.events.push(GkEvent::Established);
            }
        }
    }
}

fn transcript_hash(echoes: &BTreeMap<u32, BTreeMap<u32, [u8; 32]>>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"gk-transcript");
    for (sender, digests) in echoes {
        h.update(sender.to_be_bytes());
        for (m, d) in digests {
            h.update(m.to_be_bytes());
            h.update(d);
        }
    }
    h.finalize().into()
}

/// Single-shot RNG wrapper for the derived phase-1 nonce.
struct FixedRng {
    bytes: [u8; 32],
    used: bool,
}

impl RngCore for FixedRng {
    fn next_u32(&mut self) -> u32 {
        unimplemented!("only fill_bytes is used")
    }
    fn next_u64(&mut self) -> u64 {
        unimplemented!("only fill_bytes is used")
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        assert!(!self.used && dest.len() == 32);
        self.used = true;
        dest.copy_from_slice(&self.bytes);
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: u32, seed: u64) -> BTreeMap<u32, LongTermKeys> {
        let params = GroupParams::toy();
        let indices: Vec<u32> = (1..=n).collect();
        LongTermKeys::generate(&params, &indices, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    struct Net {
        sessions: BTreeMap<u32, GroupKeySession>,
    }

    impl Net {
        fn new(n: u32, seed: u64, equivocator: Option<u32>) -> Self {
            let lts = setup(n, seed);
            let members: Vec<u32> = (1..=n).collect();
            let sessions = lts
                .into_iter()
                .map(|(i, lt)| {
                    let behavior = if Some(i) == equivocator {
                        GkBehavior::EquivocateNonce
                    } else {
                        GkBehavior::Honest
                    };
                    (i, GroupKeySession::new("scope-1", members.clone(), lt, behavior))
                })
                .collect();
            Net { sessions }
        }

        fn run(&mut self, seed: u64) -> Vec<(u32, GkEvent)> {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let mut queue: Vec<(u32, u32, GkMsg)> = Vec::new();
            let mut events = Vec::new();
            let ids: Vec<u32> = self.sessions.keys().copied().collect();
            for &i in &ids {
                let mut start_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(u64::from(i)));
                let out = self.sessions.get_mut(&i).unwrap().start(&mut start_rng);
                for (targets, msg) in out.messages {
                    for to in targets {
                        queue.push((i, to, msg.clone()));
                    }
                }
                events.extend(out.events.into_iter().map(|e| (i, e)));
            }
            let mut steps = 0;
            while !queue.is_empty() {
                steps += 1;
                assert!(steps < 100_000);
                queue.shuffle(&mut rng);
                let (from, to, msg) = queue.pop().unwrap();
                let out = self.sessions.get_mut(&to).unwrap().handle(from, msg);
                for (targets, m) in out.messages {
                    for t in targets {
                        queue.push((to, t, m.clone()));
                    }
                }
                events.extend(out.events.into_iter().map(|e| (to, e)));
            }
            events
        }
    }

    #[test]
    fn all_honest_byte_identical_keys_no_exclusions() {
        for n in 2..=6u32 {
            for seed in 0..5u64 {
                let mut net = Net::new(n, seed, None);
                let events = net.run(seed);
                assert!(
                    !events.iter().any(|(_, e)| matches!(e, GkEvent::Excluded { .. })),
                    "n={n} seed={seed}"
                );
                let keys: Vec<[u8; 32]> = net
                    .sessions
                    .values()
                    .map(|s| *s.master().expect("established").bytes())
                    .collect();
                assert!(keys.windows(2).all(|w| w[0] == w[1]), "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn equivocator_excluded_survivors_agree() {
        for seed in 0..10u64 {
            let mut net = Net::new(5, seed, Some(3));
            let events = net.run(seed);
            let excluded: Vec<u32> = events
                .iter()
                .filter_map(|(_, e)| match e {
                    GkEvent::Excluded { member } => Some(*member),
                    _ => None,
                })
                .collect();
            assert!(excluded.iter().all(|&m| m == 3), "seed {seed}: {excluded:?}");
            assert!(excluded.contains(&3), "seed {seed}");
            let keys: Vec<[u8; 32]> = net
                .sessions
                .iter()
                .filter(|(i, _)| **i != 3)
                .map(|(_, s)| *s.master().expect("established").bytes())
                .collect();
            assert_eq!(keys.len(), 4);
            assert!(keys.windows(2).all(|w| w[0] == w[1]), "seed {seed}");
            // the equivocator itself never establishes
            assert!(net.sessions[&3].master().is_none());
        }
    }

    /// Recomputation oracle: the excluded member's complete view — every
    /// pairwise key it holds plus all broadcast traffic — cannot decrypt a
    /// single key-round ciphertext, so the derivation input is out of its
    /// reach.
    #[test]
    fn excluded_member_cannot_reach_key_round_nonces() {
        let n = 5u32;
        let lts = setup(n, 99);
        let members: Vec<u32> = (1..=n).collect();
        let mut sessions: BTreeMap<u32, GroupKeySession> = lts
            .iter()
            .map(|(i, lt)| {
                let behavior = if *i == 3 { GkBehavior::EquivocateNonce } else { GkBehavior::Honest };
                (*i, GroupKeySession::new("scope-1", members.clone(), lt.clone(), behavior))
            })
            .collect();
        // capture all wire traffic
        let mut wire: Vec<(u32, Vec<u32>, GkMsg)> = Vec::new();
        let mut queue: Vec<(u32, u32, GkMsg)> = Vec::new();
        for i in 1..=n {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + u64::from(i));
            let out = sessions.get_mut(&i).unwrap().start(&mut rng);
            for (targets, msg) in out.messages {
                wire.push((i, targets.clone(), msg.clone()));
                for to in targets {
                    queue.push((i, to, msg.clone()));
                }
            }
        }
        while let Some((from, to, msg)) = queue.pop() {
            let out = sessions.get_mut(&to).unwrap().handle(from, msg);
            for (targets, m) in out.messages {
                wire.push((to, targets.clone(), m.clone()));
                for t in targets {
                    queue.push((to, t, m.clone()));
                }
            }
        }
        // survivors hold a key
        let master = *sessions[&1].master().expect("established").bytes();
        let excluded_lt = &lts[&3];
        // every phase-1 contribution: no ciphertext addressed to 3, and no
        // pairwise key 3 holds opens any of them
        let mut phase1_cts = 0;
        for (from, _, msg) in &wire {
            if let GkMsg::Contribute { phase: 1, ciphertexts, commitment, session } = msg {
                assert!(!ciphertexts.contains_key(&3), "ciphertext addressed to excluded member");
                for (to, ct) in ciphertexts {
                    phase1_cts += 1;
                    for candidate in 1..=n {
                        if candidate == 3 {
                            continue;
                        }
                        let key = excluded_lt.pairwise(candidate);
                        let mut ident = Writer::new();
                        ident.str(session).u8(1).u32(*from).u32(*to);
                        assert!(
                            open(&key, &ident.finish(), commitment, ct).is_err(),
                            "excluded member decrypted a key-round nonce"
                        );
                    }
                }
            }
        }
        assert!(phase1_cts > 0);
        // and its best-effort recomputation from phase-0 nonces misses
        let mut parts: Vec<Vec<u8>> = vec![b"scope-1".to_vec()];
        for m in [1u32, 2, 4, 5] {
            parts.push(m.to_be_bytes().to_vec());
            parts.push([0u8; 32].to_vec()); // it has no phase-1 nonces at all
        }
        let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
        assert_ne!(kdf("gk-master", &refs), master);
    }

    #[test]
    fn single_member_session_degenerates() {
        let lts = setup(1, 5);
        let mut s = GroupKeySession::new("solo", vec![1], lts[&1].clone(), GkBehavior::Honest);
        let out = s.start(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(out.events[0], GkEvent::Established));
        assert!(s.master().is_some());
    }

    #[test]
    fn session_keys_distinct_and_deterministic() {
        let lts = setup(2, 6);
        let mut a = GroupKeySession::new("s", vec![1, 2], lts[&1].clone(), GkBehavior::Honest);
        let mut b = GroupKeySession::new("s", vec![1, 2], lts[&2].clone(), GkBehavior::Honest);
        let mut queue = Vec::new();
        let oa = a.start(&mut ChaCha8Rng::seed_from_u64(1));
        for (t, m) in oa.messages {
            for to in t {
                queue.push((1u32, to, m));
                break;
            }
        }
        let ob = b.start(&mut ChaCha8Rng::seed_from_u64(2));
        for (t, m) in ob.messages {
            for to in t {
                queue.push((2u32, to, m));
                break;
            }
        }
        while let Some((from, to, msg)) = queue.pop() {
            let out = if to == 1 { a.handle(from, msg) } else { b.handle(from, msg) };
            for (t, m) in out.messages {
                for dest in t {
                    queue.push((to, dest, m.clone()));
                }
            }
        }
        let ma = a.master().unwrap();
        assert_eq!(ma.bytes(), b.master().unwrap().bytes());

        let s1 = gk_session_key(ma, "s1", b"fresh");
        let s1_again = gk_session_key(ma, "s1", b"fresh");
        let s2 = gk_session_key(ma, "s2", b"fresh");
        assert_eq!(s1.bytes(), s1_again.bytes());
        assert_ne!(s1.bytes(), s2.bytes());
        assert_ne!(s1.bytes(), ma.bytes());

        // payload sealing accepts only SessionKey values; master key bytes
        // reused as a session key cannot open a session-key seal
        let sealed = seal_payload(&s1, b"n", b"aad", b"data");
        assert_eq!(open_payload(&s1, b"n", b"aad", &sealed).unwrap(), b"data");
        assert!(open_payload(&s2, b"n", b"aad", &sealed).is_err());
    }

    #[test]
    fn changed_nonce_changes_key() {
        // two runs with different seeds give different masters
        let mut n1 = Net::new(3, 1, None);
        n1.run(1);
        let mut n2 = Net::new(3, 2, None);
        n2.run(2);
        assert_ne!(
            n1.sessions[&1].master().unwrap().bytes(),
            n2.sessions[&1].master().unwrap().bytes()
        );
    }

    #[test]
    fn wire_roundtrip() {
        let mut cts = BTreeMap::new();
        cts.insert(2u32, vec![1, 2, 3]);
        let mut digs = BTreeMap::new();
        digs.insert(1u32, [7u8; 32]);
        let msgs = vec![
            GkMsg::Contribute { session: "s".into(), phase: 0, commitment: [1; 32], ciphertexts: cts },
            GkMsg::Echo { session: "s".into(), phase: 1, digests: digs },
            GkMsg::Confirm { session: "s".into(), phase: 0, transcript: [9; 32] },
        ];
        for m in msgs {
            assert_eq!(GkMsg::decode(&m.encode()).unwrap(), m);
        }
    }
}
