//! Distributed notice board.
//!
//! A publish disseminates a value to the membership; members vote on it
//! with a Byzantine agreement instance and, on a yes-decision, contribute
//! signature shares over `(key, epoch, hash(value))`. A combined
//! attestation makes the entry servable by any single member: retrieval
//! verifies the group signature locally, so no trust in the serving node
//! is needed. One share per member per `(key, epoch)` plus the `n - t`
//! combining threshold give at-most-one attested value per slot even under
//! conflicting concurrent publishes.

use std::collections::btree_map::Entry as MapEntry;
use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::aba::{AbaBehavior, AbaKeys, AbaMsg, AbaOutput, AbaSession, Targets};
use crate::tsig::{ts_combine, ts_sign_share, ts_verify, CompositeSignature, SignatureShare};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

pub fn notice_body(key: &str, epoch: u64, value_hash: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("notice").str(key).u64(epoch).raw(value_hash);
    w.finish()
}

pub fn hash_value(value: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"qflow-notice-value");
    h.update(value);
    h.finalize().into()
}

fn aba_instance_id(key: &str, epoch: u64, vhash: &[u8; 32]) -> String {
    format!("nb/{key}/{epoch}/{}", hex::encode(&vhash[..8]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NbMsg {
    Propose {
        key: String,
        epoch: u64,
        value: Vec<u8>,
    },
    Aba {
        instance: String,
        msg: AbaMsg,
    },
    AttestShare {
        key: String,
        epoch: u64,
        vhash: [u8; 32],
        share: SignatureShare,
    },
    Entry {
        key: String,
        epoch: u64,
        value: Vec<u8>,
        attestation: CompositeSignature,
    },
    Retrieve {
        key: String,
        epoch: u64,
    },
    RetrieveResp {
        key: String,
        epoch: u64,
        value: Option<Vec<u8>>,
        attestation: Option<CompositeSignature>,
    },
}

impl Encode for NbMsg {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            NbMsg::Propose { key, epoch, value } => {
                w.u8(0).str(key).u64(*epoch).bytes(value);
            }
            NbMsg::Aba { instance, msg } => {
                w.u8(1).str(instance);
                msg.encode_into(w);
            }
            NbMsg::AttestShare { key, epoch, vhash, share } => {
                w.u8(2).str(key).u64(*epoch).raw(vhash);
                share.encode_into(w);
            }
            NbMsg::Entry { key, epoch, value, attestation } => {
                w.u8(3).str(key).u64(*epoch).bytes(value);
                attestation.encode_into(w);
            }
            NbMsg::Retrieve { key, epoch } => {
                w.u8(4).str(key).u64(*epoch);
            }
            NbMsg::RetrieveResp { key, epoch, value, attestation } => {
                w.u8(5).str(key).u64(*epoch);
                match value {
                    Some(v) => {
                        w.u8(1).bytes(v);
                    }
                    None => {
                        w.u8(0);
                    }
                }
                match attestation {
                    Some(a) => {
                        w.u8(1);
                        a.encode_into(w);
                    }
                    None => {
                        w.u8(0);
                    }
                }
            }
        }
    }
}

impl Decode for NbMsg {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match r.u8()? {
            0 => NbMsg::Propose {
                key: r.str()?.to_string(),
                epoch: r.u64()?,
                value: r.bytes()?.to_vec(),
            },
            1 => NbMsg::Aba {
                instance: r.str()?.to_string(),
                msg: AbaMsg::decode_from(r)?,
            },
            2 => {
                let key = r.str()?.to_string();
                let epoch = r.u64()?;
                let mut vhash = [0u8; 32];
                vhash.copy_from_slice(r.raw(32)?);
                NbMsg::AttestShare {
                    key,
                    epoch,
                    vhash,
                    share: SignatureShare::decode_from(r)?,
                }
            }
            3 => NbMsg::Entry {
                key: r.str()?.to_string(),
                epoch: r.u64()?,
                value: r.bytes()?.to_vec(),
                attestation: CompositeSignature::decode_from(r)?,
            },
            4 => NbMsg::Retrieve {
                key: r.str()?.to_string(),
                epoch: r.u64()?,
            },
            5 => {
                let key = r.str()?.to_string();
                let epoch = r.u64()?;
                let value = match r.u8()? {
                    0 => None,
                    1 => Some(r.bytes()?.to_vec()),
                    d => return Err(WireError::BadDiscriminant(d, "RetrieveResp.value")),
                };
                let attestation = match r.u8()? {
                    0 => None,
                    1 => Some(CompositeSignature::decode_from(r)?),
                    d => return Err(WireError::BadDiscriminant(d, "RetrieveResp.attestation")),
                };
                NbMsg::RetrieveResp { key, epoch, value, attestation }
            }
            d => return Err(WireError::BadDiscriminant(d, "NbMsg")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NbEvent {
    /// A fully attested entry is now stored locally.
    Attested { key: String, epoch: u64, vhash: [u8; 32] },
    /// Agreement rejected a proposed value.
    PublishRejected { key: String, epoch: u64 },
    /// A served entry failed verification; the server is suspect.
    IntegrityError { key: String, epoch: u64, server: u32 },
    /// A retrieve came back clean.
    RetrieveOk { key: String, epoch: u64, value: Vec<u8> },
    /// A retrieve found nothing.
    NotFound { key: String, epoch: u64 },
    /// Suspected-malicious observation worth tracing.
    Flag(String),
    /// An agreement instance decided.
    AbaDecided { instance: String, value: bool },
}

#[derive(Debug, Default)]
pub struct NbOutput {
    pub messages: Vec<(Targets, NbMsg)>,
    pub events: Vec<NbEvent>,
}

struct Proposal {
    value: Vec<u8>,
    vhash: [u8; 32],
}

/// One member's notice board state.
pub struct NoticeBoard {
    n: u32,
    t: u32,
    my_index: u32,
    keys: AbaKeys,
    behavior: AbaBehavior,
    /// first value seen per (key, epoch)
    first_seen: BTreeMap<(String, u64), [u8; 32]>,
    /// proposals by agreement instance id
    proposals: BTreeMap<String, (String, u64, Proposal)>,
    sessions: BTreeMap<String, AbaSession>,
    /// one attestation share per (key, epoch)
    contributed: BTreeSet<(String, u64)>,
    attest_shares: BTreeMap<(String, u64, [u8; 32]), BTreeMap<u32, SignatureShare>>,
    store: BTreeMap<(String, u64), (Vec<u8>, CompositeSignature)>,
    echoed: BTreeSet<(String, u64, [u8; 32])>,
}

impl NoticeBoard {
    pub fn new(n: u32, t: u32, my_index: u32, keys: AbaKeys, behavior: AbaBehavior) -> Self {
        NoticeBoard {
            n,
            t,
            my_index,
            keys,
            behavior,
            first_seen: BTreeMap::new(),
            proposals: BTreeMap::new(),
            sessions: BTreeMap::new(),
            contributed: BTreeSet::new(),
            attest_shares: BTreeMap::new(),
            store: BTreeMap::new(),
            echoed: BTreeSet::new(),
        }
    }

    fn quorum(&self) -> usize {
        (self.n - self.t) as usize
    }

    pub fn entry(&self, key: &str, epoch: u64) -> Option<&(Vec<u8>, CompositeSignature)> {
        self.store.get(&(key.to_string(), epoch))
    }

    pub fn attested_slots(&self) -> Vec<(String, u64, [u8; 32])> {
        self.store
            .iter()
            .map(|((k, e), (v, _))| (k.clone(), *e, hash_value(v)))
            .collect()
    }

    /// Publish a value under `(key, epoch)`.
    pub fn publish(&mut self, key: &str, epoch: u64, value: &[u8]) -> NbOutput {
        let mut out = NbOutput::default();
        let msg = NbMsg::Propose {
            key: key.to_string(),
            epoch,
            value: value.to_vec(),
        };
        // treat our own proposal like a received one
        self.on_propose(self.my_index, key, epoch, value, &mut out);
        out.messages.push((Targets::All, msg));
        out
    }

    /// Ask `server` for an entry.
    pub fn retrieve(&mut self, server: u32, key: &str, epoch: u64) -> NbOutput {
        let mut out = NbOutput::default();
        out.messages.push((
            Targets::Only(vec![server]),
            NbMsg::Retrieve { key: key.to_string(), epoch },
        ));
        out
    }

    pub fn handle(&mut self, sender: u32, msg: NbMsg) -> NbOutput {
        let mut out = NbOutput::default();
        match msg {
            NbMsg::Propose { key, epoch, value } => {
                self.on_propose(sender, &key, epoch, &value, &mut out);
            }
            NbMsg::Aba { instance, msg } => {
                // late proposals can arrive after agreement traffic; buffer
                // by creating the session lazily only when the proposal is
                // known, otherwise drop (the echo rebroadcast recovers it)
                if self.proposals.contains_key(&instance) {
                    let session = self.sessions.get_mut(&instance).expect("session with proposal");
                    let aba_out = session.handle(sender, msg);
                    self.drain_aba(&instance, aba_out, &mut out);
                }
            }
            NbMsg::AttestShare { key, epoch, vhash, share } => {
                self.on_attest_share(sender, key, epoch, vhash, share, &mut out);
            }
            NbMsg::Entry { key, epoch, value, attestation } => {
                self.on_entry(key, epoch, value, attestation, &mut out);
            }
            NbMsg::Retrieve { key, epoch } => {
                let stored = self.store.get(&(key.clone(), epoch));
                out.messages.push((
                    Targets::Only(vec![sender]),
                    NbMsg::RetrieveResp {
                        key,
                        epoch,
                        value: stored.map(|(v, _)| v.clone()),
                        attestation: stored.map(|(_, a)| a.clone()),
                    },
                ));
            }
            NbMsg::RetrieveResp { key, epoch, value, attestation } => {
                match (value, attestation) {
                    (Some(value), Some(attestation)) => {
                        let vhash = hash_value(&value);
                        let body = notice_body(&key, epoch, &vhash);
                        if ts_verify(&body, &attestation, &self.keys.vks) {
                            out.events.push(NbEvent::RetrieveOk { key, epoch, value });
                        } else {
                            out.events.push(NbEvent::IntegrityError {
                                key,
                                epoch,
                                server: sender,
                            });
                        }
                    }
                    _ => out.events.push(NbEvent::NotFound { key, epoch }),
                }
            }
        }
        out
    }

    fn on_propose(&mut self, _sender: u32, key: &str, epoch: u64, value: &[u8], out: &mut NbOutput) {
        let vhash = hash_value(value);
        let instance = aba_instance_id(key, epoch, &vhash);
        let slot = (key.to_string(), epoch);

        // echo each distinct proposal once so every member learns of it
        if self.echoed.insert((key.to_string(), epoch, vhash)) {
            out.messages.push((
                Targets::All,
                NbMsg::Propose {
                    key: key.to_string(),
                    epoch,
                    value: value.to_vec(),
                },
            ));
        }

        let first = match self.first_seen.entry(slot) {
            MapEntry::Vacant(e) => {
                e.insert(vhash);
                true
            }
            MapEntry::Occupied(e) => *e.get() == vhash,
        };

        if let MapEntry::Vacant(e) = self.proposals.entry(instance.clone()) {
            e.insert((
                key.to_string(),
                epoch,
                Proposal {
                    value: value.to_vec(),
                    vhash,
                },
            ));
            let mut session = AbaSession::new(
                &instance,
                self.n,
                self.t,
                self.my_index,
                self.keys.clone(),
                self.behavior,
            );
            // vote to accept only the first value seen for this slot
            let aba_out = session.start(first).expect("fresh session");
            self.sessions.insert(instance.clone(), session);
            self.drain_aba(&instance, aba_out, out);
        }
    }

    fn drain_aba(&mut self, instance: &str, aba_out: AbaOutput, out: &mut NbOutput) {
        for (targets, msg) in aba_out.messages {
            out.messages.push((
                targets,
                NbMsg::Aba {
                    instance: instance.to_string(),
                    msg,
                },
            ));
        }
        for flag in aba_out.flags {
            out.events.push(NbEvent::Flag(format!("{instance}: {flag}")));
        }
        if let Some(value) = aba_out.decided {
            out.events.push(NbEvent::AbaDecided {
                instance: instance.to_string(),
                value,
            });
            let (key, epoch, proposal) = {
                let (k, e, p) = self.proposals.get(instance).expect("proposal");
                (k.clone(), *e, p.vhash)
            };
            let _ = proposal;
            if value {
                self.maybe_contribute(&key, epoch, out);
            } else {
                out.events.push(NbEvent::PublishRejected { key, epoch });
            }
        }
    }

    fn maybe_contribute(&mut self, key: &str, epoch: u64, out: &mut NbOutput) {
        let slot = (key.to_string(), epoch);
        if self.contributed.contains(&slot) {
            return;
        }
        // contribute for the value this member voted to accept
        let Some(vhash) = self.first_seen.get(&slot).copied() else {
            return;
        };
        let instance = aba_instance_id(key, epoch, &vhash);
        let Some(session) = self.sessions.get(&instance) else {
            return;
        };
        if session.decision() != Some(true) {
            return;
        }
        self.contributed.insert(slot);
        let body = notice_body(key, epoch, &vhash);
        let share = ts_sign_share(&body, &self.keys.sig_key, &self.keys.vks).expect("own key");
        let msg = NbMsg::AttestShare {
            key: key.to_string(),
            epoch,
            vhash,
            share: share.clone(),
        };
        self.on_attest_share(self.my_index, key.to_string(), epoch, vhash, share, out);
        out.messages.push((Targets::All, msg));
    }

    fn on_attest_share(
        &mut self,
        _sender: u32,
        key: String,
        epoch: u64,
        vhash: [u8; 32],
        share: SignatureShare,
        out: &mut NbOutput,
    ) {
        let body = notice_body(&key, epoch, &vhash);
        if !crate::tsig::ts_verify_share(&body, &share, &self.keys.vks) {
            out.events
                .push(NbEvent::Flag(format!("bad attest share for {key}@{epoch}")));
            return;
        }
        let quorum = self.quorum();
        let entry = self
            .attest_shares
            .entry((key.clone(), epoch, vhash))
            .or_default();
        entry.insert(share.index, share);
        let shares: Vec<SignatureShare> = entry.values().cloned().collect();
        if shares.len() >= quorum && !self.store.contains_key(&(key.clone(), epoch)) {
            if let Ok(attestation) = ts_combine(&body, &shares, &self.keys.vks) {
                // we can only store the value if we know it
                let instance = aba_instance_id(&key, epoch, &vhash);
                if let Some((_, _, proposal)) = self.proposals.get(&instance) {
                    let value = proposal.value.clone();
                    self.store_entry(key, epoch, value, attestation, out);
                }
            }
        }
    }

    fn on_entry(
        &mut self,
        key: String,
        epoch: u64,
        value: Vec<u8>,
        attestation: CompositeSignature,
        out: &mut NbOutput,
    ) {
        let vhash = hash_value(&value);
        let body = notice_body(&key, epoch, &vhash);
        if !ts_verify(&body, &attestation, &self.keys.vks) {
            out.events
                .push(NbEvent::Flag(format!("unverifiable entry for {key}@{epoch}")));
            return;
        }
        self.store_entry(key, epoch, value, attestation, out);
    }

    fn store_entry(
        &mut self,
        key: String,
        epoch: u64,
        value: Vec<u8>,
        attestation: CompositeSignature,
        out: &mut NbOutput,
    ) {
        let slot = (key.clone(), epoch);
        match self.store.get(&slot) {
            Some((existing, _)) if *existing != value => {
                // two verifying attestations for one slot would need an
                // honest double-signer; this must never happen
                out.events.push(NbEvent::Flag(format!(
                    "conflicting attested values for {key}@{epoch}"
                )));
            }
            Some(_) => {}
            None => {
                let vhash = hash_value(&value);
                self.store.insert(slot, (value.clone(), attestation.clone()));
                out.events.push(NbEvent::Attested { key: key.clone(), epoch, vhash });
                out.messages.push((
                    Targets::All,
                    NbMsg::Entry { key, epoch, value, attestation },
                ));
            }
        }
    }
}
