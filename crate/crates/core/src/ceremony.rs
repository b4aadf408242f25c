//! Key ceremony documents: the trusted dealer's output.
//!
//! A ceremony produces one share document per participant (their secret
//! key shares, decimal-encoded) and one public verification document (the
//! group parameters, policy, polynomial commitments and derived member
//! verification keys). Dealer secrets — the group key and polynomial
//! coefficients — are never written anywhere; the hash identifier is
//! recorded so a reader knows which function the artifacts pin.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{GroupParams, Profile};
use crate::sharing::{share_commitment, Dealing, SharingPolicy};
use crate::tsig::{SigningKeyShare, VerificationKeySet};

pub const HASH_ID: &str = "sha-256";

#[derive(Debug, Error)]
pub enum CeremonyError {
    #[error("document parse error: {0}")]
    Parse(String),
    #[error("document invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamsDoc {
    pub profile: String,
    pub p: String,
    pub q: String,
    pub g: String,
    pub hash: String,
}

impl ParamsDoc {
    pub fn from_params(params: &GroupParams) -> Self {
        ParamsDoc {
            profile: params.profile().as_str().to_string(),
            p: params.p().to_str_radix(10),
            q: params.q().to_str_radix(10),
            g: params.generator().value().to_str_radix(10),
            hash: HASH_ID.to_string(),
        }
    }

    pub fn to_params(&self) -> Result<GroupParams, CeremonyError> {
        let parse = |s: &str, what: &str| -> Result<BigUint, CeremonyError> {
            BigUint::parse_bytes(s.as_bytes(), 10)
                .ok_or_else(|| CeremonyError::Invalid(format!("bad decimal {what}")))
        };
        let profile = Profile::parse(&self.profile)
            .ok_or_else(|| CeremonyError::Invalid(format!("unknown profile {}", self.profile)))?;
        GroupParams::from_parts(
            parse(&self.p, "p")?,
            parse(&self.q, "q")?,
            parse(&self.g, "g")?,
            profile,
        )
        .map_err(|e| CeremonyError::Invalid(e.to_string()))
    }
}

/// One participant's share file.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ShareDoc {
    pub dealing_id: String,
    pub participant: String,
    pub indices: Vec<u32>,
    /// decimal share values, parallel to `indices`
    pub values: Vec<String>,
    pub params: ParamsDoc,
}

impl ShareDoc {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CeremonyError> {
        let doc: ShareDoc =
            toml::from_str(text).map_err(|e| CeremonyError::Parse(e.to_string()))?;
        if doc.indices.len() != doc.values.len() {
            return Err(CeremonyError::Invalid("indices/values length mismatch".into()));
        }
        if doc.indices.contains(&0) {
            return Err(CeremonyError::Invalid("zero share index".into()));
        }
        Ok(doc)
    }

    pub fn key_shares(&self, vks: &VerificationKeySet) -> Result<Vec<SigningKeyShare>, CeremonyError> {
        let params = self.params.to_params()?;
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&index, value)| {
                let v = BigUint::parse_bytes(value.as_bytes(), 10)
                    .ok_or_else(|| CeremonyError::Invalid("bad decimal share".into()))?;
                let value = params
                    .scalar_checked(v)
                    .map_err(|e| CeremonyError::Invalid(e.to_string()))?;
                let share = crate::sharing::Share {
                    index,
                    value,
                    dealing_id: self.dealing_id.clone(),
                };
                if !crate::sharing::verify_share(&share, &vks.dealing, &params) {
                    return Err(CeremonyError::Invalid(format!(
                        "share {index} fails the commitment check"
                    )));
                }
                Ok(SigningKeyShare {
                    share,
                    participant: self.participant.clone(),
                })
            })
            .collect()
    }
}

/// The public verification document for a dealing.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PublicDoc {
    pub dealing_id: String,
    pub threshold: u32,
    pub share_count: u32,
    /// participant -> share indices
    pub assignment: BTreeMap<String, Vec<u32>>,
    /// decimal commitments, g^coefficient
    pub commitments: Vec<String>,
    /// decimal member verification keys by index
    pub member_vks: BTreeMap<String, String>,
    pub params: ParamsDoc,
}

impl PublicDoc {
    pub fn from_vks(vks: &VerificationKeySet) -> Self {
        PublicDoc {
            dealing_id: vks.dealing.dealing_id.clone(),
            threshold: vks.policy.threshold,
            share_count: vks.policy.share_count,
            assignment: vks.policy.index_assignment().into_iter().collect(),
            commitments: vks
                .dealing
                .commitments
                .iter()
                .map(|c| c.value().to_str_radix(10))
                .collect(),
            member_vks: vks
                .member_vks
                .iter()
                .map(|(i, vk)| (i.to_string(), vk.value().to_str_radix(10)))
                .collect(),
            params: ParamsDoc::from_params(&vks.params),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CeremonyError> {
        let doc: PublicDoc =
            toml::from_str(text).map_err(|e| CeremonyError::Parse(e.to_string()))?;
        doc.to_vks()?;
        Ok(doc)
    }

    /// Reconstruct and re-verify the key set: params invariants, subgroup
    /// membership of every commitment, and member keys consistent with the
    /// commitments.
    pub fn to_vks(&self) -> Result<VerificationKeySet, CeremonyError> {
        let params = self.params.to_params()?;
        if self.threshold == 0 || self.threshold > self.share_count {
            return Err(CeremonyError::Invalid("bad policy".into()));
        }
        if self.commitments.len() != self.threshold as usize {
            return Err(CeremonyError::Invalid("commitment count != threshold".into()));
        }
        let commitments = self
            .commitments
            .iter()
            .map(|c| {
                let v = BigUint::parse_bytes(c.as_bytes(), 10)
                    .ok_or_else(|| CeremonyError::Invalid("bad decimal commitment".into()))?;
                params
                    .element_checked(v)
                    .map_err(|e| CeremonyError::Invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let weights: BTreeMap<String, u32> = self
            .assignment
            .iter()
            .map(|(p, idxs)| (p.clone(), idxs.len() as u32))
            .collect();
        let policy = if weights.values().all(|&w| w == 1) {
            SharingPolicy::simple(self.threshold, self.share_count)
        } else {
            SharingPolicy::weighted(self.threshold, weights)
        };
        if policy.share_count != self.share_count {
            return Err(CeremonyError::Invalid("assignment does not cover share count".into()));
        }
        let dealing = Dealing {
            policy: policy.clone(),
            commitments,
            dealing_id: self.dealing_id.clone(),
        };
        let mut member_vks = BTreeMap::new();
        for (index_str, vk_str) in &self.member_vks {
            let index: u32 = index_str
                .parse()
                .map_err(|_| CeremonyError::Invalid("bad vk index".into()))?;
            let v = BigUint::parse_bytes(vk_str.as_bytes(), 10)
                .ok_or_else(|| CeremonyError::Invalid("bad decimal vk".into()))?;
            let vk = params
                .element_checked(v)
                .map_err(|e| CeremonyError::Invalid(e.to_string()))?;
            if vk != share_commitment(&dealing, index, &params) {
                return Err(CeremonyError::Invalid(format!(
                    "member vk {index} inconsistent with commitments"
                )));
            }
            member_vks.insert(index, vk);
        }
        if member_vks.len() != self.share_count as usize {
            return Err(CeremonyError::Invalid("missing member vks".into()));
        }
        Ok(VerificationKeySet {
            group_vk: dealing.commitments[0].clone(),
            member_vks,
            policy,
            dealing,
            params,
        })
    }
}

/// Run a ceremony: deal a fresh group key under the policy and produce the
/// documents. The secret and coefficients die with this call frame.
pub fn ceremony(
    policy: &SharingPolicy,
    profile: Profile,
    rng: &mut impl rand::RngCore,
    dealing_id: &str,
) -> Result<(PublicDoc, Vec<ShareDoc>), CeremonyError> {
    let params = GroupParams::for_profile(profile);
    let (vks, key_shares) = crate::tsig::ts_deal(policy, &params, rng, dealing_id)
        .map_err(|e| CeremonyError::Invalid(e.to_string()))?;
    let public = PublicDoc::from_vks(&vks);
    let mut per_participant: BTreeMap<String, (Vec<u32>, Vec<String>)> = BTreeMap::new();
    for ks in &key_shares {
        let entry = per_participant.entry(ks.participant.clone()).or_default();
        entry.0.push(ks.share.index);
        entry.1.push(ks.share.value.value().to_str_radix(10));
    }
    let shares = per_participant
        .into_iter()
        .map(|(participant, (indices, values))| ShareDoc {
            dealing_id: dealing_id.to_string(),
            participant,
            indices,
            values,
            params: ParamsDoc::from_params(&params),
        })
        .collect();
    Ok((public, shares))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ceremony_roundtrip() {
        let policy = SharingPolicy::simple(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (public, shares) = ceremony(&policy, Profile::Toy, &mut rng, "cer-1").unwrap();
        assert_eq!(shares.len(), 3);

        let public_text = public.to_toml();
        let parsed = PublicDoc::from_toml_str(&public_text).unwrap();
        let vks = parsed.to_vks().unwrap();

        // shares parse and verify against the public doc
        for share_doc in &shares {
            let text = share_doc.to_toml();
            let parsed_share = ShareDoc::from_toml_str(&text).unwrap();
            let keys = parsed_share.key_shares(&vks).unwrap();
            assert_eq!(keys.len(), 1);
        }
    }

    #[test]
    fn weighted_ceremony_share_counts() {
        let mut weights = BTreeMap::new();
        weights.insert("exec1".into(), 1);
        weights.insert("exec2".into(), 1);
        weights.insert("exec3".into(), 1);
        weights.insert("president".into(), 3);
        weights.insert("vp1".into(), 2);
        weights.insert("vp2".into(), 2);
        let policy = SharingPolicy::weighted(3, weights);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (public, shares) = ceremony(&policy, Profile::Toy, &mut rng, "cer-w").unwrap();
        assert_eq!(shares.len(), 6);
        assert_eq!(public.share_count, 10);
        let president = shares.iter().find(|s| s.participant == "president").unwrap();
        assert_eq!(president.indices.len(), 3);
    }

    #[test]
    fn tampered_public_doc_rejected() {
        let policy = SharingPolicy::simple(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (public, _) = ceremony(&policy, Profile::Toy, &mut rng, "cer-t").unwrap();
        let mut doc = public;
        // swap one member vk for the generator
        let key = doc.member_vks.keys().next().unwrap().clone();
        doc.member_vks.insert(key, "4".to_string());
        let text = doc.to_toml();
        assert!(PublicDoc::from_toml_str(&text).is_err());
    }

    #[test]
    fn corrupt_share_value_rejected() {
        let policy = SharingPolicy::simple(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (public, shares) = ceremony(&policy, Profile::Toy, &mut rng, "cer-c").unwrap();
        let vks = public.to_vks().unwrap();
        let mut bad = ShareDoc::from_toml_str(&shares[0].to_toml()).unwrap();
        let old: u64 = bad.values[0].parse().unwrap();
        bad.values[0] = ((old + 1) % 11).to_string();
        assert!(bad.key_shares(&vks).is_err());
    }

    #[test]
    fn junk_documents_do_not_panic() {
        for junk in ["", "not toml", "[params]\nprofile = 3", "dealing_id = 1"] {
            let _ = ShareDoc::from_toml_str(junk);
            let _ = PublicDoc::from_toml_str(junk);
        }
    }

    #[test]
    fn params_doc_validates_invariants() {
        let doc = ParamsDoc {
            profile: "toy".into(),
            p: "24".into(), // not prime
            q: "11".into(),
            g: "4".into(),
            hash: HASH_ID.into(),
        };
        assert!(doc.to_params().is_err());
    }
}
