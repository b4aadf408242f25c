//! Hierarchical anonymous broadcast channels with mixing and noise.
//!
//! Nodes take a pseudonym from a hash of their public key and join the
//! channel named by its first `m` bits: smaller masks mean bigger channels,
//! hence bigger anonymity sets and more traffic. Packets are fixed-size
//! sealed blobs addressed to a channel; noise packets are indistinguishable
//! random blobs, every node emits exactly `out_rate` packets per tick out
//! of a shuffled mix buffer, and each link carries a constant number of
//! transmissions per tick regardless of real load. The wire format carries
//! no sender field at all.
//!
//! Forwarding across the channel tree: a packet never descends into a
//! subtree incompatible with its target prefix; it travels up toward the
//! root and down only inside the target's region, and it is never echoed
//! to the link it arrived on. That is this module's reading of the mask
//! condition in the source protocol's forwarding figure.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::groupkey::SessionKey;
use crate::symmetric::TAG_LEN;
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

/// Pseudonym width in bits.
pub const PSEUDONYM_BITS: u8 = 32;

/// Fixed payload size of every packet ciphertext, in bytes. Scenario
/// configurable; the default keeps traffic realistic without bloating
/// desk-scale runs.
pub const DEFAULT_PACKET_BYTES: usize = 256;

pub const DEFAULT_OUT_RATE: usize = 2;
pub const DEFAULT_MIX_CAPACITY: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnonError {
    #[error("mask {0} out of range")]
    MaskRange(u8),
    #[error("plaintext too large for fixed packet size")]
    Oversized,
}

/// Pseudonym: hash of the node's public key, truncated to a fixed width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pseudonym(pub u32);

impl Pseudonym {
    pub fn from_public_key(key_bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"qflow-pseudonym");
        h.update(key_bytes);
        let d = h.finalize();
        Pseudonym(u32::from_be_bytes([d[0], d[1], d[2], d[3]]))
    }

    /// The channel this pseudonym belongs to at mask `m`.
    pub fn channel(self, mask: u8) -> Result<ChannelId, AnonError> {
        ChannelId::new(self.0, mask)
    }
}

/// A channel is a pseudonym prefix: only the first `mask` bits matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId {
    /// Left-aligned prefix; bits past `mask` are zero.
    pub prefix: u32,
    pub mask: u8,
}

impl ChannelId {
    pub fn new(bits: u32, mask: u8) -> Result<Self, AnonError> {
        if mask > PSEUDONYM_BITS {
            return Err(AnonError::MaskRange(mask));
        }
        let prefix = if mask == 0 { 0 } else { bits & (u32::MAX << (PSEUDONYM_BITS - mask)) };
        Ok(ChannelId { prefix, mask })
    }

    pub fn root() -> Self {
        ChannelId { prefix: 0, mask: 0 }
    }

    /// One prefix extends the other.
    pub fn compatible(self, other: ChannelId) -> bool {
        let m = self.mask.min(other.mask);
        if m == 0 {
            return true;
        }
        let shift = PSEUDONYM_BITS - m;
        (self.prefix >> shift) == (other.prefix >> shift)
    }

    /// `self` is inside (or equal to) `other`'s region.
    pub fn within(self, other: ChannelId) -> bool {
        self.mask >= other.mask && self.compatible(other)
    }

    pub fn display(self) -> String {
        if self.mask == 0 {
            return "root".to_string();
        }
        let mut s = String::new();
        for i in 0..self.mask {
            s.push(if self.prefix & (1 << (31 - i)) != 0 { '1' } else { '0' });
        }
        s
    }
}

/// Fixed-size packet: target channel plus an opaque blob. Noise and real
/// packets share this exact layout; nothing identifies the originator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonPacket {
    pub target: ChannelId,
    pub blob: Vec<u8>,
}

impl AnonPacket {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"qflow-anon-packet");
        h.update(self.target.prefix.to_be_bytes());
        h.update([self.target.mask]);
        h.update(&self.blob);
        h.finalize().into()
    }
}

impl Encode for AnonPacket {
    fn encode_into(&self, w: &mut Writer) {
        w.u32(self.target.prefix);
        w.u8(self.target.mask);
        w.bytes(&self.blob);
    }
}

impl Decode for AnonPacket {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let prefix = r.u32()?;
        let mask = r.u8()?;
        if mask > PSEUDONYM_BITS {
            return Err(WireError::Invalid("mask out of range"));
        }
        let target = ChannelId::new(prefix, mask).map_err(|_| WireError::Invalid("mask"))?;
        if target.prefix != prefix {
            return Err(WireError::Invalid("prefix has bits past mask"));
        }
        Ok(AnonPacket {
            target,
            blob: r.bytes()?.to_vec(),
        })
    }
}

/// Seal a payload for a channel under a scope session key. The blob is
/// padded to the fixed size before sealing so its length never varies.
pub fn seal_anon_payload(
    key: &SessionKey,
    target: ChannelId,
    plaintext: &[u8],
    packet_bytes: usize,
) -> Result<AnonPacket, AnonError> {
    let capacity = packet_bytes.checked_sub(TAG_LEN + 4).ok_or(AnonError::Oversized)?;
    if plaintext.len() > capacity {
        return Err(AnonError::Oversized);
    }
    let mut framed = Vec::with_capacity(packet_bytes - TAG_LEN);
    framed.extend_from_slice(&(plaintext.len() as u32).to_be_bytes());
    framed.extend_from_slice(plaintext);
    framed.resize(packet_bytes - TAG_LEN, 0);
    let aad = {
        let mut w = Writer::new();
        w.u32(target.prefix).u8(target.mask);
        w.finish()
    };
    let blob = crate::groupkey::seal_payload(key, b"anon", &aad, &framed);
    debug_assert_eq!(blob.len(), packet_bytes);
    Ok(AnonPacket { target, blob })
}

/// Attempt to open a packet with a scope key. Noise and foreign packets
/// fail the tag check.
pub fn open_anon_payload(key: &SessionKey, packet: &AnonPacket) -> Option<Vec<u8>> {
    let aad = {
        let mut w = Writer::new();
        w.u32(packet.target.prefix).u8(packet.target.mask);
        w.finish()
    };
    let framed = crate::groupkey::open_payload(key, b"anon", &aad, &packet.blob).ok()?;
    if framed.len() < 4 {
        return None;
    }
    let len = u32::from_be_bytes([framed[0], framed[1], framed[2], framed[3]]) as usize;
    framed.get(4..4 + len).map(|s| s.to_vec())
}

/// Fresh noise packet: random blob of the fixed size, addressed to a
/// pseudo-random populated channel.
pub fn noise_packet(
    channels: &[ChannelId],
    packet_bytes: usize,
    rng: &mut impl RngCore,
) -> AnonPacket {
    let target = channels[(rng.next_u32() as usize) % channels.len()];
    let mut blob = vec![0u8; packet_bytes];
    rng.fill_bytes(&mut blob);
    AnonPacket { target, blob }
}

// ---- topology ----------------------------------------------------------------

/// Static channel-tree topology over the scenario's nodes. Node ids here
/// are party indices.
#[derive(Debug, Clone)]
pub struct ChannelTopology {
    pub membership: BTreeMap<u32, ChannelId>,
    channels: Vec<ChannelId>,
    /// channel -> parent channel (nearest populated proper prefix)
    parents: BTreeMap<ChannelId, Option<ChannelId>>,
    neighbors: BTreeMap<u32, Vec<u32>>,
}

impl ChannelTopology {
    pub fn new(membership: BTreeMap<u32, ChannelId>) -> Self {
        let mut channels: Vec<ChannelId> = membership.values().copied().collect();
        channels.sort();
        channels.dedup();

        let mut parents: BTreeMap<ChannelId, Option<ChannelId>> = BTreeMap::new();
        for &c in &channels {
            let parent = channels
                .iter()
                .filter(|&&p| p != c && p.mask < c.mask && c.compatible(p))
                .max_by_key(|p| p.mask)
                .copied();
            parents.insert(c, parent);
        }

        let mut neighbors: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        let members_of = |c: ChannelId| -> Vec<u32> {
            membership
                .iter()
                .filter(|(_, ch)| **ch == c)
                .map(|(&n, _)| n)
                .collect()
        };
        // complete graph within a channel
        for &c in &channels {
            let ms = members_of(c);
            for &a in &ms {
                for &b in &ms {
                    if a != b {
                        neighbors.entry(a).or_default().insert(b);
                    }
                }
            }
        }
        // complete bipartite along tree edges
        for (&c, parent) in &parents {
            if let Some(p) = parent {
                for &a in &members_of(c) {
                    for &b in &members_of(*p) {
                        neighbors.entry(a).or_default().insert(b);
                        neighbors.entry(b).or_default().insert(a);
                    }
                }
            }
        }
        // roots (no populated ancestor) interconnect
        let roots: Vec<ChannelId> = channels
            .iter()
            .filter(|c| parents[c].is_none())
            .copied()
            .collect();
        for &ra in &roots {
            for &rb in &roots {
                if ra == rb {
                    continue;
                }
                for &a in &members_of(ra) {
                    for &b in &members_of(rb) {
                        neighbors.entry(a).or_default().insert(b);
                    }
                }
            }
        }

        ChannelTopology {
            membership: membership.clone(),
            channels,
            parents,
            neighbors: neighbors
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    pub fn neighbors(&self, node: u32) -> &[u32] {
        self.neighbors.get(&node).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn channel_of(&self, node: u32) -> ChannelId {
        self.membership[&node]
    }

    /// Every node inside the target's region.
    pub fn members_of_region(&self, target: ChannelId) -> Vec<u32> {
        self.membership
            .iter()
            .filter(|(_, c)| c.within(target))
            .map(|(&n, _)| n)
            .collect()
    }

    /// May `holder` forward a packet targeted at `target` to `next`?
    /// Down-moves are allowed only into the target's region; up-moves
    /// (toward the populated root layer) are always allowed.
    pub fn may_forward(&self, holder: u32, next: u32, target: ChannelId) -> bool {
        let hc = self.channel_of(holder);
        let nc = self.channel_of(next);
        if nc.compatible(target) {
            return true;
        }
        // next must lie on the way up from holder: its channel is the
        // holder channel's populated parent (or a root peer when the
        // holder is itself a root)
        if let Some(Some(p)) = self.parents.get(&hc) {
            if nc == *p {
                return true;
            }
        }
        if self.parents.get(&hc) == Some(&None) && self.parents.get(&nc) == Some(&None) && nc != hc
        {
            // root layer crossing, but never into an incompatible root's
            // own subtree unless that root leads somewhere: allowed only
            // when the target is not within the holder's own region
            return !target.compatible(hc) || nc.compatible(target);
        }
        false
    }
}

// ---- node state ----------------------------------------------------------------

/// Buffered packet plus the link it arrived on (None for own packets).
#[derive(Debug, Clone)]
struct Buffered {
    packet: AnonPacket,
    arrived_from: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnonEvent {
    /// Successfully decrypted a packet addressed to a channel we are in.
    Delivered { payload: Vec<u8> },
    DuplicateDropped,
    BufferOverflow,
}

#[derive(Debug, Default)]
pub struct AnonTick {
    /// (next hop, packet) transmissions this tick.
    pub transmissions: Vec<(u32, AnonPacket)>,
    /// logical packets emitted from the mix (== out_rate)
    pub emitted: usize,
}

/// Per-node channel state: mix buffer, duplicate filter, rate settings.
pub struct AnonNode {
    pub me: u32,
    pub joined: ChannelId,
    topo: ChannelTopology,
    packet_bytes: usize,
    out_rate: usize,
    capacity: usize,
    mix_buffer: VecDeque<Buffered>,
    seen: BTreeSet<[u8; 32]>,
    seen_order: VecDeque<[u8; 32]>,
    scope_keys: Vec<SessionKey>,
}

impl AnonNode {
    pub fn new(
        me: u32,
        topo: ChannelTopology,
        packet_bytes: usize,
        out_rate: usize,
        capacity: usize,
    ) -> Self {
        let joined = topo.channel_of(me);
        AnonNode {
            me,
            joined,
            topo,
            packet_bytes,
            out_rate,
            capacity,
            mix_buffer: VecDeque::new(),
            seen: BTreeSet::new(),
            seen_order: VecDeque::new(),
            scope_keys: Vec::new(),
        }
    }

    pub fn add_scope_key(&mut self, key: SessionKey) {
        self.scope_keys.push(key);
    }

    fn remember(&mut self, digest: [u8; 32]) -> bool {
        if !self.seen.insert(digest) {
            return false;
        }
        self.seen_order.push_back(digest);
        // bounded duplicate memory
        if self.seen_order.len() > 4096 {
            if let Some(old) = self.seen_order.pop_front() {
                self.seen.remove(&old);
            }
        }
        true
    }

    fn buffer(&mut self, packet: AnonPacket, arrived_from: Option<u32>) -> Option<AnonEvent> {
        let mut overflow = None;
        if self.mix_buffer.len() >= self.capacity {
            // evict a pseudo-random victim; oldest-first would bias against
            // long-traveling packets
            let d = packet.digest();
            let victim = u32::from_be_bytes([d[0], d[1], d[2], d[3]]) as usize
                % (self.mix_buffer.len() + 1);
            if victim < self.mix_buffer.len() {
                self.mix_buffer.remove(victim);
            }
            overflow = Some(AnonEvent::BufferOverflow);
        }
        self.mix_buffer.push_back(Buffered { packet, arrived_from });
        overflow
    }

    /// A channel is a broadcast group: its sender already reached every
    /// co-member, so forwarding back into the arrival channel is pure
    /// redundancy and is suppressed. Depends only on public routing data,
    /// never on real-vs-noise.
    fn link_eligible(&self, n: u32, target: ChannelId, arrived_from: Option<u32>) -> bool {
        if Some(n) == arrived_from {
            return false;
        }
        if let Some(a) = arrived_from {
            if self.topo.channel_of(n) == self.topo.channel_of(a) {
                return false;
            }
        }
        self.topo.may_forward(self.me, n, target)
    }

    /// A packet is worth buffering only if some link may carry it onward.
    fn has_onward_link(&self, target: ChannelId, arrived_from: Option<u32>) -> bool {
        self.topo
            .neighbors(self.me)
            .iter()
            .any(|&n| self.link_eligible(n, target, arrived_from))
    }

    /// Originate a message: enqueue into our own mix buffer exactly like a
    /// relayed packet, so origination is indistinguishable from relaying.
    pub fn send(
        &mut self,
        key: &SessionKey,
        target: ChannelId,
        plaintext: &[u8],
    ) -> Result<Option<AnonEvent>, AnonError> {
        let packet = seal_anon_payload(key, target, plaintext, self.packet_bytes)?;
        self.remember(packet.digest());
        Ok(self.buffer(packet, None))
    }

    /// Handle an incoming packet from a neighbor.
    pub fn receive(&mut self, from: u32, packet: AnonPacket) -> Vec<AnonEvent> {
        let mut events = Vec::new();
        if packet.blob.len() != self.packet_bytes {
            // malformed size: drop silently, wire format is fixed
            return events;
        }
        if !self.remember(packet.digest()) {
            events.push(AnonEvent::DuplicateDropped);
            return events;
        }
        // deliver locally when we sit inside the target's region
        if self.joined.within(packet.target) {
            for key in &self.scope_keys {
                if let Some(payload) = open_anon_payload(key, &packet) {
                    events.push(AnonEvent::Delivered { payload });
                    break;
                }
            }
        }
        if self.has_onward_link(packet.target, Some(from)) {
            if let Some(ev) = self.buffer(packet, Some(from)) {
                events.push(ev);
            }
        }
        events
    }

    /// One mixing tick: shuffle, emit exactly `out_rate` logical packets,
    /// pad every link to exactly `out_rate` transmissions with noise.
    pub fn tick(&mut self, rng: &mut impl RngCore) -> AnonTick {
        let mut out = AnonTick::default();
        // Fisher-Yates over the buffer with the node's own randomness
        let mut items: Vec<Buffered> = self.mix_buffer.drain(..).collect();
        for i in (1..items.len()).rev() {
            let j = (rng.next_u32() as usize) % (i + 1);
            items.swap(i, j);
        }
        let mut emitted: Vec<Buffered> = Vec::with_capacity(self.out_rate);
        for item in items {
            if emitted.len() < self.out_rate {
                emitted.push(item);
            } else {
                self.mix_buffer.push_back(item);
            }
        }
        while emitted.len() < self.out_rate {
            let packet = noise_packet(self.topo.channels(), self.packet_bytes, rng);
            self.remember(packet.digest());
            emitted.push(Buffered { packet, arrived_from: None });
        }
        out.emitted = emitted.len();

        let neighbors: Vec<u32> = self.topo.neighbors(self.me).to_vec();
        let mut per_link: BTreeMap<u32, usize> = neighbors.iter().map(|&n| (n, 0)).collect();
        for item in &emitted {
            for &n in &neighbors {
                if !self.link_eligible(n, item.packet.target, item.arrived_from) {
                    continue;
                }
                out.transmissions.push((n, item.packet.clone()));
                *per_link.get_mut(&n).unwrap() += 1;
            }
        }
        // pad every link to a constant rate so volumes carry no signal
        for &n in &neighbors {
            while per_link[&n] < self.out_rate {
                let packet = noise_packet(self.topo.channels(), self.packet_bytes, rng);
                out.transmissions.push((n, packet));
                *per_link.get_mut(&n).unwrap() += 1;
            }
            // trim overshoot is impossible: emitted <= out_rate per link
        }
        out
    }

    pub fn out_rate(&self) -> usize {
        self.out_rate
    }
}
