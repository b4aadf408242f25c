//! Threshold secret sharing with verifiable dealings — the group "safe".
//!
//! A dealer splits a secret scalar into `n` shares so any `k` reconstruct
//! it and fewer reveal nothing. Dealings publish polynomial-coefficient
//! commitments so individual shares can be checked before interpolation:
//! a lying member's share is rejected instead of corrupting the result.
//! Weighted (hierarchical) policies give a participant several consecutive
//! share indices.

use std::collections::BTreeMap;

use rand::RngCore;
use thiserror::Error;

use crate::group::{GroupElement, GroupError, GroupParams, Scalar};
use crate::wire::{Decode, Encode, Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShareError {
    #[error("invalid policy: {0}")]
    BadPolicy(&'static str),
    #[error("secret out of range")]
    SecretRange,
    #[error("fewer than {needed} valid shares (got {got})")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares from mixed dealings")]
    MixedDealings,
    #[error("group error: {0}")]
    Group(#[from] GroupError),
}

/// Who gets how many shares. `weights` maps participant name to share
/// multiplicity; unweighted policies hand out one share per index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharingPolicy {
    pub threshold: u32,
    pub share_count: u32,
    pub weights: Option<BTreeMap<String, u32>>,
}

impl SharingPolicy {
    pub fn simple(threshold: u32, share_count: u32) -> Self {
        SharingPolicy {
            threshold,
            share_count,
            weights: None,
        }
    }

    pub fn weighted(threshold: u32, weights: BTreeMap<String, u32>) -> Self {
        let share_count = weights.values().sum();
        SharingPolicy {
            threshold,
            share_count,
            weights: Some(weights),
        }
    }

    pub fn validate(&self) -> Result<(), ShareError> {
        if self.threshold == 0 {
            return Err(ShareError::BadPolicy("threshold must be at least 1"));
        }
        if self.threshold > self.share_count {
            return Err(ShareError::BadPolicy("threshold exceeds share count"));
        }
        if let Some(w) = &self.weights {
            if w.values().any(|&m| m == 0) {
                return Err(ShareError::BadPolicy("zero weight"));
            }
            if w.values().sum::<u32>() != self.share_count {
                return Err(ShareError::BadPolicy("weights do not sum to share count"));
            }
        }
        Ok(())
    }

    /// Index ranges per participant, multiplicity expanded, in name order.
    pub fn index_assignment(&self) -> Vec<(String, Vec<u32>)> {
        match &self.weights {
            None => (1..=self.share_count)
                .map(|i| (format!("p{i}"), vec![i]))
                .collect(),
            Some(w) => {
                let mut next = 1_u32;
                w.iter()
                    .map(|(name, &mult)| {
                        let idx: Vec<u32> = (next..next + mult).collect();
                        next += mult;
                        (name.clone(), idx)
                    })
                    .collect()
            }
        }
    }
}

/// One participant's fragment of the secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub index: u32,
    pub value: Scalar,
    pub dealing_id: String,
}

impl Encode for Share {
    fn encode_into(&self, w: &mut Writer) {
        w.u32(self.index);
        self.value.encode_into(w);
        w.str(&self.dealing_id);
    }
}

impl Decode for Share {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Share {
            index: r.u32()?,
            value: Scalar::decode_from(r)?,
            dealing_id: r.str()?.to_string(),
        })
    }
}

/// Public output of a deal: the policy plus `g^{coefficient}` commitments
/// (commitment[0] = g^secret). Anyone holding it can verify shares and,
/// with k of them, resolve the secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dealing {
    pub policy: SharingPolicy,
    pub commitments: Vec<GroupElement>,
    pub dealing_id: String,
}

/// Split `secret` into shares of a fresh random polynomial with
/// `f(0) = secret`. Deterministic for a given RNG state.
pub fn deal(
    secret: &Scalar,
    policy: &SharingPolicy,
    params: &GroupParams,
    rng: &mut impl RngCore,
    dealing_id: &str,
) -> Result<(Dealing, Vec<Share>), ShareError> {
    policy.validate()?;
    if secret.value() >= params.q() {
        return Err(ShareError::SecretRange);
    }
    let k = policy.threshold as usize;
    let mut coeffs = Vec::with_capacity(k);
    coeffs.push(secret.clone());
    for _ in 1..k {
        coeffs.push(params.scalar_random(rng));
    }
    let commitments = coeffs.iter().map(|c| params.g_pow(c)).collect();
    let shares = (1..=policy.share_count)
        .map(|i| Share {
            index: i,
            value: eval_poly(&coeffs, i, params),
            dealing_id: dealing_id.to_string(),
        })
        .collect();
    Ok((
        Dealing {
            policy: policy.clone(),
            commitments,
            dealing_id: dealing_id.to_string(),
        },
        shares,
    ))
}

fn eval_poly(coeffs: &[Scalar], x: u32, params: &GroupParams) -> Scalar {
    let xs = params.scalar_from_u64(u64::from(x));
    let mut acc = params.scalar_zero();
    // Horner, highest coefficient first
    for c in coeffs.iter().rev() {
        acc = params.scalar_add(&params.scalar_mul(&acc, &xs), c);
    }
    acc
}

/// Expected public key for a share index: product of commitments raised to
/// powers of the index.
pub fn share_commitment(dealing: &Dealing, index: u32, params: &GroupParams) -> GroupElement {
    let xs = params.scalar_from_u64(u64::from(index));
    let mut acc = params.identity();
    let mut pow = params.scalar_from_u64(1);
    for c in &dealing.commitments {
        acc = params.mul(&acc, &params.pow(c, &pow));
        pow = params.scalar_mul(&pow, &xs);
    }
    acc
}

/// True iff `g^{share.value}` matches the dealing's commitments for the
/// share's index. Malformed inputs return false.
pub fn verify_share(share: &Share, dealing: &Dealing, params: &GroupParams) -> bool {
    if share.dealing_id != dealing.dealing_id {
        return false;
    }
    if share.index == 0 || share.value.value() >= params.q() {
        return false;
    }
    params.g_pow(&share.value) == share_commitment(dealing, share.index, params)
}

/// Interpolate the secret from at least `k` commitment-valid shares.
/// Shares that fail the commitment check are rejected before interpolation.
pub fn reconstruct(
    shares: &[Share],
    dealing: &Dealing,
    params: &GroupParams,
) -> Result<Scalar, ShareError> {
    if shares.iter().any(|s| s.dealing_id != dealing.dealing_id) {
        return Err(ShareError::MixedDealings);
    }
    let mut valid: BTreeMap<u32, &Share> = BTreeMap::new();
    for s in shares {
        if verify_share(s, dealing, params) {
            valid.entry(s.index).or_insert(s);
        }
    }
    let k = dealing.policy.threshold as usize;
    if valid.len() < k {
        return Err(ShareError::InsufficientShares {
            needed: k,
            got: valid.len(),
        });
    }
    let chosen: Vec<&Share> = valid.values().take(k).copied().collect();
    let indices: Vec<u32> = chosen.iter().map(|s| s.index).collect();
    let mut acc = params.scalar_zero();
    for s in &chosen {
        let lambda = params.lagrange_coeff(s.index, &indices)?;
        acc = params.scalar_add(&acc, &params.scalar_mul(&lambda, &s.value));
    }
    Ok(acc)
}
