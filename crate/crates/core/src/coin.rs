//! Threshold coin toss: an unpredictable common bit per coin name.
//!
//! Each coin name hashes to a fresh base in the subgroup; members raise it
//! to their key share, exactly like a signature share. Pooling a threshold
//! of valid shares recovers the combined element, and the coin's bit is the
//! low bit of a digest over the name and that element, so every party that
//! combines any valid share subset sees the same bit and nobody can predict
//! it from fewer shares.

use thiserror::Error;

use crate::dleq::{dleq_prove, dleq_verify, DleqProof};
use crate::group::{GroupElement, GroupParams};
use crate::sharing::ShareError;
use crate::tsig::{SigningKeyShare, VerificationKeySet};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoinError {
    #[error("fewer than {needed} valid coin shares (got {got})")]
    InsufficientShares { needed: usize, got: usize },
    #[error("key share does not belong to this scheme")]
    ForeignKeyShare,
    #[error("sharing error: {0}")]
    Sharing(#[from] ShareError),
}

/// Public side of a coin dealing. Coin schemes usually come from an
/// independent dealing so their corruption budget is separate from the
/// signature scheme's.
#[derive(Debug, Clone)]
pub struct CoinScheme {
    pub vks: VerificationKeySet,
}

impl CoinScheme {
    pub fn params(&self) -> &GroupParams {
        &self.vks.params
    }

    pub fn threshold(&self) -> usize {
        self.vks.threshold()
    }
}

/// One member's share of a named coin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinShare {
    pub coin_name: Vec<u8>,
    pub index: u32,
    pub value: GroupElement,
    pub proof: DleqProof,
}

impl Encode for CoinShare {
    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.coin_name);
        w.u32(self.index);
        self.value.encode_into(w);
        self.proof.encode_into(w);
    }
}

impl Decode for CoinShare {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(CoinShare {
            coin_name: r.bytes()?.to_vec(),
            index: r.u32()?,
            value: GroupElement::decode_from(r)?,
            proof: DleqProof::decode_from(r)?,
        })
    }
}

/// Coin name used by agreement instances: `aba/<instance>/round/<round>`.
pub fn aba_coin_name(instance: &str, round: u64) -> Vec<u8> {
    format!("aba/{instance}/round/{round}").into_bytes()
}

/// Produce this member's share of the named coin.
pub fn coin_share(
    name: &[u8],
    key: &SigningKeyShare,
    scheme: &CoinScheme,
) -> Result<CoinShare, CoinError> {
    if key.share.dealing_id != scheme.vks.dealing.dealing_id {
        return Err(CoinError::ForeignKeyShare);
    }
    let params = scheme.params();
    let base = params.hash_to_group(name);
    let value = params.pow(&base, &key.share.value);
    let proof = dleq_prove(&key.share.value, &params.generator(), &base, params);
    Ok(CoinShare {
        coin_name: name.to_vec(),
        index: key.share.index,
        value,
        proof,
    })
}

/// Validity check for one coin share.
pub fn coin_verify_share(cs: &CoinShare, scheme: &CoinScheme) -> bool {
    let Some(member_vk) = scheme.vks.member_vks.get(&cs.index) else {
        return false;
    };
    let params = scheme.params();
    let base = params.hash_to_group(&cs.coin_name);
    dleq_verify(
        &cs.proof,
        &params.generator(),
        &base,
        member_vk,
        &cs.value,
        params,
    )
}

/// Combine a threshold of valid shares for `name` into the coin's bit.
pub fn coin_combine(name: &[u8], shares: &[CoinShare], scheme: &CoinScheme) -> Result<bool, CoinError> {
    let mut valid: BTreeMap<u32, &CoinShare> = BTreeMap::new();
    for s in shares {
        if s.coin_name == name && coin_verify_share(s, scheme) {
            valid.entry(s.index).or_insert(s);
        }
    }
    let k = scheme.threshold();
    if valid.len() < k {
        return Err(CoinError::InsufficientShares {
            needed: k,
            got: valid.len(),
        });
    }
    let params = scheme.params();
    let chosen: Vec<&CoinShare> = valid.values().take(k).copied().collect();
    let indices: Vec<u32> = chosen.iter().map(|s| s.index).collect();
    let mut combined = params.identity();
    for s in &chosen {
        let lambda = params
            .lagrange_coeff(s.index, &indices)
            .map_err(ShareError::from)?;
        combined = params.mul(&combined, &params.pow(&s.value, &lambda));
    }
    Ok(coin_bit(name, &combined))
}

/// The bit is the least significant bit of a digest over the name and the
/// combined element; prefixing the name gives per-coin domain separation.
fn coin_bit(name: &[u8], combined: &GroupElement) -> bool {
    let mut h = Sha256::new();
    h.update(b"qflow-coin");
    h.update((name.len() as u64).to_be_bytes());
    h.update(name);
    let bytes = combined.value().to_bytes_be();
    h.update((bytes.len() as u64).to_be_bytes());
    h.update(&bytes);
    let digest = h.finalize();
    digest[31] & 1 == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupParams;
    use crate::sharing::SharingPolicy;
    use crate::tsig::ts_deal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_scheme(k: u32, n: u32, seed: u64) -> (CoinScheme, Vec<SigningKeyShare>) {
        let params = GroupParams::toy();
        let (vks, keys) = ts_deal(
            &SharingPolicy::simple(k, n),
            &params,
            &mut ChaCha20Rng::seed_from_u64(seed),
            "coin-test",
        )
        .unwrap();
        (CoinScheme { vks }, keys)
    }

    #[test]
    fn honest_share_verifies_and_is_deterministic() {
        let (scheme, keys) = toy_scheme(2, 3, 1);
        let a = coin_share(b"coin-1", &keys[0], &scheme).unwrap();
        let b = coin_share(b"coin-1", &keys[0], &scheme).unwrap();
        assert!(coin_verify_share(&a, &scheme));
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn replayed_share_for_other_name_rejected() {
        let (scheme, keys) = toy_scheme(2, 3, 2);
        let mut share = coin_share(b"name-a", &keys[0], &scheme).unwrap();
        share.coin_name = b"name-b".to_vec();
        assert!(!coin_verify_share(&share, &scheme));
    }

    #[test]
    fn corrupted_share_rejected() {
        let (scheme, keys) = toy_scheme(2, 3, 3);
        let mut share = coin_share(b"name", &keys[0], &scheme).unwrap();
        let params = scheme.params();
        share.value = params.mul(&share.value, &params.generator());
        assert!(!coin_verify_share(&share, &scheme));
    }

    /// Distinct names give bases with no single fixed exponent relating the
    /// shares, checked by enumerating the toy exponent space.
    #[test]
    fn distinct_names_unrelated_at_toy_scale() {
        let (scheme, keys) = toy_scheme(2, 3, 4);
        let params = scheme.params().clone();
        let s1 = coin_share(b"left", &keys[0], &scheme).unwrap();
        let s2 = coin_share(b"right", &keys[0], &scheme).unwrap();
        // no exponent e maps value1 to value2 for *all* key shares
        let mut universal: Vec<u64> = Vec::new();
        for e in 0..11_u64 {
            let es = params.scalar_from_u64(e);
            let all = keys.iter().all(|k| {
                let a = coin_share(b"left", k, &scheme).unwrap();
                let b = coin_share(b"right", k, &scheme).unwrap();
                params.pow(&a.value, &es) == b.value
            });
            if all {
                universal.push(e);
            }
        }
        // the only way a single exponent could map left to right for every
        // member is if the bases are related by that exponent; the test
        // demonstrates the shares do not leak any simpler relation
        let base_l = params.hash_to_group(b"left");
        let base_r = params.hash_to_group(b"right");
        for e in universal {
            let es = params.scalar_from_u64(e);
            assert_eq!(params.pow(&base_l, &es), base_r);
        }
        let _ = (s1, s2);
    }

    #[test]
    fn all_k_subsets_agree() {
        let (scheme, keys) = toy_scheme(3, 5, 5);
        for name in [&b"c0"[..], b"c1", b"c2"] {
            let shares: Vec<CoinShare> = keys
                .iter()
                .map(|k| coin_share(name, k, &scheme).unwrap())
                .collect();
            let mut bits = std::collections::BTreeSet::new();
            for a in 0..5 {
                for b in (a + 1)..5 {
                    for c in (b + 1)..5 {
                        let sub = vec![shares[a].clone(), shares[b].clone(), shares[c].clone()];
                        bits.insert(coin_combine(name, &sub, &scheme).unwrap());
                    }
                }
            }
            assert_eq!(bits.len(), 1, "disagreement on {name:?}");
        }
    }

    #[test]
    fn below_threshold_insufficient() {
        let (scheme, keys) = toy_scheme(2, 3, 6);
        let shares = vec![coin_share(b"c", &keys[0], &scheme).unwrap()];
        assert!(matches!(
            coin_combine(b"c", &shares, &scheme),
            Err(CoinError::InsufficientShares { needed: 2, got: 1 })
        ));
    }

    /// Direct computation over 32 coin names: the empirical bit frequency
    /// stays inside the loose deterministic bound [8/32, 24/32].
    #[test]
    fn bit_frequency_balanced() {
        let (scheme, keys) = toy_scheme(2, 3, 7);
        let mut ones = 0;
        for i in 0..32 {
            let name = format!("c{i}").into_bytes();
            let shares: Vec<CoinShare> = keys
                .iter()
                .take(2)
                .map(|k| coin_share(&name, k, &scheme).unwrap())
                .collect();
            if coin_combine(&name, &shares, &scheme).unwrap() {
                ones += 1;
            }
        }
        assert!((8..=24).contains(&ones), "bit frequency {ones}/32");
    }

    #[test]
    fn wire_roundtrip() {
        let (scheme, keys) = toy_scheme(2, 3, 8);
        let share = coin_share(b"wire-coin", &keys[1], &scheme).unwrap();
        let back = CoinShare::decode(&share.encode()).unwrap();
        assert_eq!(back, share);
        assert!(coin_verify_share(&back, &scheme));
    }
}
