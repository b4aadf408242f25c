//! Symmetric primitives used for scope-key payloads and pairwise channels:
//! a SHA-256 based KDF, an authenticated stream cipher, and key wrappers
//! that zero their material on drop.
//!
//! The construction is a textbook hash-counter keystream with a keyed
//! digest tag. It is deliberately simple; the simulation's adversary is
//! message-level, and side-channel hardening is out of scope.

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const TAG_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SealError {
    #[error("ciphertext truncated")]
    Truncated,
    #[error("authentication tag mismatch")]
    TagMismatch,
}

/// Length-framed SHA-256 KDF.
pub fn kdf(label: &str, parts: &[&[u8]]) -> [u8; KEY_LEN] {
    let mut h = Sha256::new();
    h.update(b"qflow-kdf");
    h.update((label.len() as u64).to_be_bytes());
    h.update(label.as_bytes());
    for part in parts {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}

fn keystream_block(key: &[u8; KEY_LEN], nonce: &[u8], counter: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"qflow-ks");
    h.update(key);
    h.update((nonce.len() as u64).to_be_bytes());
    h.update(nonce);
    h.update(counter.to_be_bytes());
    h.finalize().into()
}

fn tag(key: &[u8; KEY_LEN], nonce: &[u8], aad: &[u8], ct: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(b"qflow-tag");
    h.update(key);
    h.update((nonce.len() as u64).to_be_bytes());
    h.update(nonce);
    h.update((aad.len() as u64).to_be_bytes());
    h.update(aad);
    h.update((ct.len() as u64).to_be_bytes());
    h.update(ct);
    h.finalize().into()
}

/// Encrypt-and-authenticate. Output layout: ciphertext || tag.
pub fn seal(key: &[u8; KEY_LEN], nonce: &[u8], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(plaintext.len() + TAG_LEN);
    for (i, chunk) in plaintext.chunks(32).enumerate() {
        let ks = keystream_block(key, nonce, i as u64);
        out.extend(chunk.iter().zip(ks.iter()).map(|(p, k)| p ^ k));
    }
    let t = tag(key, nonce, aad, &out);
    out.extend_from_slice(&t);
    out
}

/// Verify the tag, then decrypt. Any tamper yields `TagMismatch`.
pub fn open(
    key: &[u8; KEY_LEN],
    nonce: &[u8],
    aad: &[u8],
    sealed: &[u8],
) -> Result<Vec<u8>, SealError> {
    if sealed.len() < TAG_LEN {
        return Err(SealError::Truncated);
    }
    let (ct, got_tag) = sealed.split_at(sealed.len() - TAG_LEN);
    let want = tag(key, nonce, aad, ct);
    // fold the comparison so a mismatch position is not observable
    let diff = want
        .iter()
        .zip(got_tag.iter())
        .fold(0u8, |acc, (a, b)| acc | (a ^ b));
    if diff != 0 {
        return Err(SealError::TagMismatch);
    }
    let mut out = Vec::with_capacity(ct.len());
    for (i, chunk) in ct.chunks(32).enumerate() {
        let ks = keystream_block(key, nonce, i as u64);
        out.extend(chunk.iter().zip(ks.iter()).map(|(c, k)| c ^ k));
    }
    Ok(out)
}

/// Secret bytes that are wiped when dropped.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretBytes([u8; KEY_LEN]);

impl SecretBytes {
    pub fn new(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn expose(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl Drop for SecretBytes {
    fn drop(&mut self) {
        // volatile write keeps the wipe from being optimized away
        for b in self.0.iter_mut() {
            unsafe { std::ptr::write_volatile(b, 0) };
        }
    }
}

impl std::fmt::Debug for SecretBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretBytes(..)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_roundtrip() {
        let key = kdf("test", &[b"k"]);
        let sealed = seal(&key, b"n1", b"aad", b"hello workflow");
        assert_eq!(open(&key, b"n1", b"aad", &sealed).unwrap(), b"hello workflow");
    }

    #[test]
    fn tamper_detected_everywhere() {
        let key = kdf("test", &[b"k"]);
        let sealed = seal(&key, b"n1", b"aad", b"payload bytes!");
        for i in 0..sealed.len() {
            let mut bad = sealed.clone();
            bad[i] ^= 0x40;
            assert_eq!(open(&key, b"n1", b"aad", &bad), Err(SealError::TagMismatch));
        }
    }

    #[test]
    fn wrong_key_nonce_aad_rejected() {
        let key = kdf("test", &[b"k"]);
        let other = kdf("test", &[b"other"]);
        let sealed = seal(&key, b"n1", b"aad", b"x");
        assert!(open(&other, b"n1", b"aad", &sealed).is_err());
        assert!(open(&key, b"n2", b"aad", &sealed).is_err());
        assert!(open(&key, b"n1", b"bad", &sealed).is_err());
        assert!(open(&key, b"n1", b"aad", b"").is_err());
    }

    #[test]
    fn distinct_labels_distinct_keys() {
        assert_ne!(kdf("a", &[b"x"]), kdf("b", &[b"x"]));
        assert_ne!(kdf("a", &[b"x"]), kdf("a", &[b"y"]));
        // framing: ("ab", "c") != ("a", "bc")
        assert_ne!(kdf("l", &[b"ab", b"c"]), kdf("l", &[b"a", b"bc"]));
    }
}
