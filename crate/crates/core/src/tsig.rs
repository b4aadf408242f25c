//! (k, l)-threshold group signature.
//!
//! A trusted dealer shares a group secret `x`; each signer raises the
//! hashed message into the subgroup and exponentiates with its key share,
//! attaching an equality-of-discrete-log proof against its published member
//! verification key. Any `k` verified shares combine — Lagrange in the
//! exponent — into one composite signature checkable against `g^x`. The
//! contributor list is retained, so no member can later deny participating.

use std::collections::BTreeMap;

use rand::RngCore;
use thiserror::Error;

use crate::dleq::{dleq_prove, dleq_verify, DleqProof};
use crate::group::{GroupElement, GroupParams};
use crate::sharing::{deal, share_commitment, Dealing, Share, ShareError, SharingPolicy};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SigError {
    #[error("fewer than {needed} valid signature shares (got {got})")]
    InsufficientShares { needed: usize, got: usize },
    #[error("key share does not belong to this key set")]
    ForeignKeyShare,
    #[error("sharing error: {0}")]
    Sharing(#[from] ShareError),
}

/// One signer's key share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigningKeyShare {
    pub share: Share,
    pub participant: String,
}

/// Public key material for a dealing: the group key `g^x`, per-member keys
/// `g^{x_i}` derived from the dealing commitments, and the policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationKeySet {
    pub group_vk: GroupElement,
    pub member_vks: BTreeMap<u32, GroupElement>,
    pub policy: SharingPolicy,
    pub dealing: Dealing,
    pub params: GroupParams,
}

impl VerificationKeySet {
    pub fn threshold(&self) -> usize {
        self.policy.threshold as usize
    }

    /// Recompute member keys from the dealing commitments; used by tests
    /// and by anyone who wants to audit a published key set.
    pub fn derive_member_vk(&self, index: u32) -> GroupElement {
        share_commitment(&self.dealing, index, &self.params)
    }
}

/// A share of a signature over some message, with its validity proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureShare {
    pub index: u32,
    pub value: GroupElement,
    pub proof: DleqProof,
}

impl Encode for SignatureShare {
    fn encode_into(&self, w: &mut Writer) {
        w.u32(self.index);
        self.value.encode_into(w);
        self.proof.encode_into(w);
    }
}

impl Decode for SignatureShare {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(SignatureShare {
            index: r.u32()?,
            value: GroupElement::decode_from(r)?,
            proof: DleqProof::decode_from(r)?,
        })
    }
}

/// A group's joint signature: the combined value plus the shares that
/// produced it. `contributors` is the non-repudiation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeSignature {
    pub value: GroupElement,
    pub contributors: BTreeMap<u32, SignatureShare>,
}

impl Encode for CompositeSignature {
    fn encode_into(&self, w: &mut Writer) {
        self.value.encode_into(w);
        w.u32(self.contributors.len() as u32);
        for share in self.contributors.values() {
            share.encode_into(w);
        }
    }
}

impl Decode for CompositeSignature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let value = GroupElement::decode_from(r)?;
        let len = r.vec_len()?;
        let mut contributors = BTreeMap::new();
        for _ in 0..len {
            let share = SignatureShare::decode_from(r)?;
            if contributors.insert(share.index, share).is_some() {
                return Err(WireError::Invalid("duplicate contributor index"));
            }
        }
        Ok(CompositeSignature { value, contributors })
    }
}

/// Deal a fresh group signing key.
pub fn ts_deal(
    policy: &SharingPolicy,
    params: &GroupParams,
    rng: &mut impl RngCore,
    dealing_id: &str,
) -> Result<(VerificationKeySet, Vec<SigningKeyShare>), SigError> {
    let secret = params.scalar_random(rng);
    let (dealing, shares) = deal(&secret, policy, params, rng, dealing_id)?;
    let group_vk = dealing.commitments[0].clone();
    let member_vks = shares
        .iter()
        .map(|s| (s.index, share_commitment(&dealing, s.index, params)))
        .collect();
    let assignment = policy.index_assignment();
    let owner_of = |index: u32| -> String {
        assignment
            .iter()
            .find(|(_, idxs)| idxs.contains(&index))
            .map(|(name, _)| name.clone())
            .unwrap_or_else(|| format!("p{index}"))
    };
    let key_shares = shares
        .into_iter()
        .map(|share| {
            let participant = owner_of(share.index);
            SigningKeyShare { share, participant }
        })
        .collect();
    Ok((
        VerificationKeySet {
            group_vk,
            member_vks,
            policy: policy.clone(),
            dealing,
            params: params.clone(),
        },
        key_shares,
    ))
}

/// Produce this signer's share over `message`: `H(M)^{x_i}` plus a proof
/// linking it to the signer's member verification key.
pub fn ts_sign_share(
    message: &[u8],
    key: &SigningKeyShare,
    vks: &VerificationKeySet,
) -> Result<SignatureShare, SigError> {
    if key.share.dealing_id != vks.dealing.dealing_id {
        return Err(SigError::ForeignKeyShare);
    }
    let params = &vks.params;
    let base = params.hash_to_group(message);
    let value = params.pow(&base, &key.share.value);
    let proof = dleq_prove(&key.share.value, &params.generator(), &base, params);
    Ok(SignatureShare {
        index: key.share.index,
        value,
        proof,
    })
}

/// Check one share against the key set and message.
pub fn ts_verify_share(message: &[u8], ss: &SignatureShare, vks: &VerificationKeySet) -> bool {
    let Some(member_vk) = vks.member_vks.get(&ss.index) else {
        return false;
    };
    let params = &vks.params;
    let base = params.hash_to_group(message);
    dleq_verify(
        &ss.proof,
        &params.generator(),
        &base,
        member_vk,
        &ss.value,
        params,
    )
}

/// Combine at least `k` valid shares into the composite signature. Invalid
/// shares are silently dropped first; the combination uses the k smallest
/// valid indices, and the result is independent of which k were chosen.
pub fn ts_combine(
    message: &[u8],
    shares: &[SignatureShare],
    vks: &VerificationKeySet,
) -> Result<CompositeSignature, SigError> {
    let mut valid: BTreeMap<u32, &SignatureShare> = BTreeMap::new();
    for s in shares {
        if ts_verify_share(message, s, vks) {
            valid.entry(s.index).or_insert(s);
        }
    }
    let k = vks.threshold();
    if valid.len() < k {
        return Err(SigError::InsufficientShares {
            needed: k,
            got: valid.len(),
        });
    }
    let chosen: Vec<&SignatureShare> = valid.values().take(k).copied().collect();
    let indices: Vec<u32> = chosen.iter().map(|s| s.index).collect();
    let params = &vks.params;
    let mut value = params.identity();
    for s in &chosen {
        let lambda = params
            .lagrange_coeff(s.index, &indices)
            .map_err(ShareError::from)?;
        value = params.mul(&value, &params.pow(&s.value, &lambda));
    }
    Ok(CompositeSignature {
        value,
        contributors: chosen.into_iter().map(|s| (s.index, s.clone())).collect(),
    })
}

/// Full composite verification: the contributor count meets the threshold,
/// every contributor share verifies under its own member key, and
/// recombining the contributors reproduces the composite value.
pub fn ts_verify(message: &[u8], sig: &CompositeSignature, vks: &VerificationKeySet) -> bool {
    let k = vks.threshold();
    if sig.contributors.len() < k {
        return false;
    }
    for (index, share) in &sig.contributors {
        if *index != share.index || !ts_verify_share(message, share, vks) {
            return false;
        }
    }
    let params = &vks.params;
    let indices: Vec<u32> = sig.contributors.keys().copied().collect();
    let mut value = params.identity();
    for share in sig.contributors.values() {
        let Ok(lambda) = params.lagrange_coeff(share.index, &indices) else {
            return false;
        };
        value = params.mul(&value, &params.pow(&share.value, &lambda));
    }
    value == sig.value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_deal(k: u32, n: u32, seed: u64) -> (VerificationKeySet, Vec<SigningKeyShare>) {
        let params = GroupParams::toy();
        ts_deal(
            &SharingPolicy::simple(k, n),
            &params,
            &mut ChaCha20Rng::seed_from_u64(seed),
            &format!("tsig-test-{seed}"),
        )
        .unwrap()
    }

    #[test]
    fn deal_shape_and_consistency() {
        let (vks, keys) = toy_deal(2, 3, 1);
        assert_eq!(keys.len(), 3);
        // member vks recomputed from commitments match the published ones
        for (idx, vk) in &vks.member_vks {
            assert_eq!(vk, &vks.derive_member_vk(*idx));
        }
        // group vk is the zeroth commitment, g^x
        assert_eq!(vks.group_vk, vks.dealing.commitments[0]);
    }

    /// Modular-exponentiation oracle: with x = 3 the group key is
    /// 4^3 mod 23 = 18.
    #[test]
    fn known_exponent_group_vk() {
        let params = GroupParams::toy();
        let x = params.scalar_from_u64(3);
        assert_eq!(
            params.g_pow(&x).value(),
            &num_bigint::BigUint::from(18_u32)
        );
    }

    /// Modular-arithmetic oracle for the signing power: x_i = 2 on a base
    /// equal to 2 gives 2^2 mod 23 = 4.
    #[test]
    fn known_share_power() {
        let params = GroupParams::toy();
        let base = params.element_checked(num_bigint::BigUint::from(2_u32)).unwrap();
        let power = params.pow(&base, &params.scalar_from_u64(2));
        assert_eq!(power.value(), &num_bigint::BigUint::from(4_u32));
    }

    #[test]
    fn sign_share_roundtrip() {
        let (vks, keys) = toy_deal(2, 3, 2);
        let msg = b"approve the merger";
        for key in &keys {
            let ss = ts_sign_share(msg, key, &vks).unwrap();
            assert!(ts_verify_share(msg, &ss, &vks));
            // deterministic power
            let again = ts_sign_share(msg, key, &vks).unwrap();
            assert_eq!(ss.value, again.value);
        }
    }

    #[test]
    fn share_for_wrong_message_rejected() {
        let (vks, keys) = toy_deal(2, 3, 3);
        let ss = ts_sign_share(b"message A", &keys[0], &vks).unwrap();
        assert!(!ts_verify_share(b"message B", &ss, &vks));
    }

    #[test]
    fn forged_value_with_reused_proof_rejected() {
        let (vks, keys) = toy_deal(2, 3, 4);
        let msg = b"m";
        let ss = ts_sign_share(msg, &keys[0], &vks).unwrap();
        let params = &vks.params;
        let mut forged = ss.clone();
        forged.value = params.mul(&forged.value, &params.generator());
        assert!(!ts_verify_share(msg, &forged, &vks));
        let mut relabel = ss.clone();
        relabel.index = 2;
        assert!(!ts_verify_share(msg, &relabel, &vks));
        let mut unknown = ss;
        unknown.index = 99;
        assert!(!ts_verify_share(msg, &unknown, &vks));
    }

    #[test]
    fn combine_and_verify() {
        let (vks, keys) = toy_deal(2, 3, 5);
        let msg = b"sign me";
        let shares: Vec<SignatureShare> = keys
            .iter()
            .map(|k| ts_sign_share(msg, k, &vks).unwrap())
            .collect();
        let sig = ts_combine(msg, &shares, &vks).unwrap();
        assert!(ts_verify(msg, &sig, &vks));
        assert_eq!(sig.contributors.len(), 2);

        // tampered composite value fails
        let mut bad = sig.clone();
        bad.value = vks.params.mul(&bad.value, &vks.params.generator());
        assert!(!ts_verify(msg, &bad, &vks));

        // trimming contributors below k fails
        let mut trimmed = sig.clone();
        let first = *trimmed.contributors.keys().next().unwrap();
        trimmed.contributors.remove(&first);
        assert!(!ts_verify(msg, &trimmed, &vks));
    }

    /// Interpolation-uniqueness oracle: every k-subset of honest shares
    /// combines to the identical composite value (n = 5, k = 3: all 10
    /// subsets).
    #[test]
    fn combine_subset_independence() {
        let (vks, keys) = toy_deal(3, 5, 6);
        let msg = b"subset independence";
        let shares: Vec<SignatureShare> = keys
            .iter()
            .map(|k| ts_sign_share(msg, k, &vks).unwrap())
            .collect();
        let mut values = std::collections::BTreeSet::new();
        let mut count = 0;
        for a in 0..5 {
            for b in (a + 1)..5 {
                for c in (b + 1)..5 {
                    let subset = vec![shares[a].clone(), shares[b].clone(), shares[c].clone()];
                    let sig = ts_combine(msg, &subset, &vks).unwrap();
                    values.insert(sig.value.value().clone());
                    count += 1;
                }
            }
        }
        assert_eq!(count, 10);
        assert_eq!(values.len(), 1);
    }

    #[test]
    fn below_threshold_is_insufficient() {
        let (vks, keys) = toy_deal(2, 3, 7);
        let msg = b"m";
        let one = vec![ts_sign_share(msg, &keys[0], &vks).unwrap()];
        assert!(matches!(
            ts_combine(msg, &one, &vks),
            Err(SigError::InsufficientShares { needed: 2, got: 1 })
        ));
        // k-1 honest plus one corrupted share stays insufficient
        let mut corrupt = ts_sign_share(msg, &keys[1], &vks).unwrap();
        corrupt.value = vks.params.mul(&corrupt.value, &vks.params.generator());
        let mixed = vec![ts_sign_share(msg, &keys[0], &vks).unwrap(), corrupt];
        assert!(matches!(
            ts_combine(msg, &mixed, &vks),
            Err(SigError::InsufficientShares { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn foreign_key_share_rejected() {
        let (vks, _) = toy_deal(2, 3, 8);
        let (_, other_keys) = toy_deal(2, 3, 9);
        assert_eq!(
            ts_sign_share(b"m", &other_keys[0], &vks).unwrap_err(),
            SigError::ForeignKeyShare
        );
    }

    /// Unforgeability at toy scale: enumerate every possible forged share
    /// for an index whose key the adversary does not hold — every (value,
    /// response) pair with every observed challenge shape. None verifies,
    /// so no composite with fewer than k honest contributors can pass.
    #[test]
    fn unforgeable_share_exhaustive() {
        let (vks, keys) = toy_deal(2, 3, 10);
        let msg = b"forge target";
        let params = vks.params.clone();
        // Adversary knows share 1 and its signature share; tries to forge
        // index 2. Enumerate all subgroup elements as candidate values and
        // all scalars as responses, with challenges taken from honest
        // transcripts and from zero.
        let honest = ts_sign_share(msg, &keys[0], &vks).unwrap();
        let mut accepted = 0;
        for value_exp in 0..11_u64 {
            let value = params.g_pow(&params.scalar_from_u64(value_exp));
            for resp in 0..11_u64 {
                for challenge in [honest.proof.challenge, [0u8; 32], [0xff; 32]] {
                    let candidate = SignatureShare {
                        index: 2,
                        value: value.clone(),
                        proof: DleqProof {
                            challenge,
                            response: params.scalar_from_u64(resp),
                        },
                    };
                    if ts_verify_share(msg, &candidate, &vks) {
                        accepted += 1;
                    }
                }
            }
        }
        assert_eq!(accepted, 0);
    }

    #[test]
    fn wire_roundtrip() {
        let (vks, keys) = toy_deal(2, 3, 11);
        let msg = b"wire";
        let shares: Vec<SignatureShare> = keys
            .iter()
            .map(|k| ts_sign_share(msg, k, &vks).unwrap())
            .collect();
        let sig = ts_combine(msg, &shares, &vks).unwrap();
        let bytes = sig.encode();
        let back = CompositeSignature::decode(&bytes).unwrap();
        assert_eq!(back, sig);
        assert!(ts_verify(msg, &back, &vks));
    }
}
