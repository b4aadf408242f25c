//! Prime-order subgroup arithmetic shared by every threshold protocol.
//!
//! The group is the quadratic-residue subgroup of a safe prime `p = 2q + 1`:
//! exponents live in `Z_q` ([`Scalar`]) and subgroup members in `Z_p*`
//! ([`GroupElement`]). Hash-to-group squares a digest into the subgroup, so
//! nobody learns a discrete log of a hashed point. Two parameter profiles
//! exist: an exhaustively checkable toy group and a 2048-bit group for
//! realistic ceremonies.

use num_bigint::BigUint;

use num_traits::{One, Zero};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{Decode, Encode, Reader, WireError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("p is not prime")]
    PNotPrime,
    #[error("q is not prime")]
    QNotPrime,
    #[error("p != 2q + 1")]
    NotSafePrime,
    #[error("generator does not have order q")]
    BadGenerator,
    #[error("scalar out of range")]
    ScalarRange,
    #[error("element outside the subgroup")]
    NotInSubgroup,
    #[error("share index {0} invalid: {1}")]
    BadIndex(u32, &'static str),
    #[error("duplicate share index {0}")]
    DuplicateIndex(u32),
    #[error("index {0} not in the interpolation set")]
    IndexNotInSet(u32),
}

/// Which parameter family a group came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Default,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Toy => "toy",
            Profile::Default => "default",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Profile::Toy),
            "default" => Some(Profile::Default),
            _ => None,
        }
    }
}

/// Safe-prime group parameters: `p = 2q + 1`, `g` generates the order-`q`
/// quadratic-residue subgroup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
    profile: Profile,
}

/// Exponent reduced modulo the subgroup order `q`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scalar(BigUint);

/// Member of the order-`q` subgroup of `Z_p*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupElement(BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

impl Encode for Scalar {
    fn encode_into(&self, w: &mut crate::wire::Writer) {
        w.biguint(&self.0);
    }
}

impl Decode for Scalar {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Scalar(r.biguint()?))
    }
}

impl Encode for GroupElement {
    fn encode_into(&self, w: &mut crate::wire::Writer) {
        w.biguint(&self.0);
    }
}

impl Decode for GroupElement {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(GroupElement(r.biguint()?))
    }
}

/// RFC 3526 2048-bit MODP group: a vetted safe prime, generator 2.
const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

impl GroupParams {
    /// Toy profile: p = 23, q = 11, g = 4. Small enough to enumerate every
    /// exponent, which the property tests rely on.
    pub fn toy() -> Self {
        GroupParams {
            p: BigUint::from(23_u32),
            q: BigUint::from(11_u32),
            g: BigUint::from(4_u32),
            profile: Profile::Toy,
        }
    }

    /// Default profile: the RFC 3526 2048-bit safe prime with generator 2.
    /// 2 is a quadratic residue mod p (p = 7 mod 8), so it generates the
    /// order-q subgroup.
    pub fn modp_2048() -> Self {
        let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("static constant");
        let q = (&p - 1_u32) >> 1;
        GroupParams {
            p,
            q,
            g: BigUint::from(2_u32),
            profile: Profile::Default,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Toy => Self::toy(),
            Profile::Default => Self::modp_2048(),
        }
    }

    /// Construct from raw values, checking every invariant (primality of p
    /// and q, the safe-prime relation, and the generator's order).
    pub fn from_parts(p: BigUint, q: BigUint, g: BigUint, profile: Profile) -> Result<Self, GroupError> {
        if !is_prime(&p) {
            return Err(GroupError::PNotPrime);
        }
        if !is_prime(&q) {
            return Err(GroupError::QNotPrime);
        }
        if p != (&q << 1) + 1_u32 {
            return Err(GroupError::NotSafePrime);
        }
        if g <= BigUint::one() || g >= p || g.modpow(&q, &p) != BigUint::one() {
            return Err(GroupError::BadGenerator);
        }
        Ok(GroupParams { p, q, g, profile })
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn generator(&self) -> GroupElement {
        GroupElement(self.g.clone())
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    // ---- scalar arithmetic -------------------------------------------------

    pub fn scalar_from_u64(&self, v: u64) -> Scalar {
        Scalar(BigUint::from(v) % &self.q)
    }

    pub fn scalar_from_biguint(&self, v: BigUint) -> Scalar {
        Scalar(v % &self.q)
    }

    /// Strict variant: rejects values not already reduced mod q.
    pub fn scalar_checked(&self, v: BigUint) -> Result<Scalar, GroupError> {
        if v < self.q {
            Ok(Scalar(v))
        } else {
            Err(GroupError::ScalarRange)
        }
    }

    pub fn scalar_zero(&self) -> Scalar {
        Scalar(BigUint::zero())
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.q)
    }

    pub fn scalar_sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &self.q - &b.0) % &self.q)
    }

    pub fn scalar_mul(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.q)
    }

    /// Multiplicative inverse mod q via Fermat; q is prime so any nonzero
    /// scalar has one.
    pub fn scalar_inv(&self, a: &Scalar) -> Option<Scalar> {
        if a.0.is_zero() {
            return None;
        }
        let e = &self.q - 2_u32;
        Some(Scalar(a.0.modpow(&e, &self.q)))
    }

    /// Uniform scalar from an RNG.
    pub fn scalar_random(&self, rng: &mut impl rand::RngCore) -> Scalar {
        // Rejection sampling over the minimal byte width keeps the
        // distribution uniform.
        let bytes = (self.q.bits() as usize + 7) / 8;
        let mut buf = vec![0u8; bytes];
        loop {
            rng.fill_bytes(&mut buf);
            let v = BigUint::from_bytes_be(&buf);
            if v < self.q {
                return Scalar(v);
            }
        }
    }

    /// Scalar derived from a digest over the given parts; used for proof
    /// challenges and deterministic nonces.
    pub fn scalar_from_hash(&self, label: &str, parts: &[&[u8]]) -> Scalar {
        let mut h = Sha256::new();
        h.update(label.as_bytes());
        for part in parts {
            h.update((part.len() as u64).to_be_bytes());
            h.update(part);
        }
        Scalar(BigUint::from_bytes_be(&h.finalize()) % &self.q)
    }

    // ---- element arithmetic ------------------------------------------------

    /// Check subgroup membership: value in [1, p) with value^q = 1 mod p.
    pub fn element_checked(&self, v: BigUint) -> Result<GroupElement, GroupError> {
        if v.is_zero() || v >= self.p || v.modpow(&self.q, &self.p) != BigUint::one() {
            return Err(GroupError::NotInSubgroup);
        }
        Ok(GroupElement(v))
    }

    pub fn is_member(&self, e: &GroupElement) -> bool {
        !e.0.is_zero() && e.0 < self.p && e.0.modpow(&self.q, &self.p) == BigUint::one()
    }

    pub fn pow(&self, base: &GroupElement, exp: &Scalar) -> GroupElement {
        GroupElement(base.0.modpow(&exp.0, &self.p))
    }

    pub fn g_pow(&self, exp: &Scalar) -> GroupElement {
        GroupElement(self.g.modpow(&exp.0, &self.p))
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement((&a.0 * &b.0) % &self.p)
    }

    /// Inverse inside the subgroup: a^(q-1), since a^q = 1.
    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        let e = &self.q - 1_u32;
        GroupElement(a.0.modpow(&e, &self.p))
    }

    /// base^(-exp) without a modular inverse: exponents live mod q.
    pub fn pow_neg(&self, base: &GroupElement, exp: &Scalar) -> GroupElement {
        let e = (&self.q - &exp.0) % &self.q;
        GroupElement(base.0.modpow(&e, &self.p))
    }

    // ---- hash to group -----------------------------------------------------

    /// Map bytes into the subgroup: hash, reduce mod p, square. Squaring
    /// lands in the quadratic-residue subgroup without revealing a discrete
    /// log. 0 and 1 are rejected and rehashed with a counter suffix.
    pub fn hash_to_group(&self, bytes: &[u8]) -> GroupElement {
        let mut counter: u64 = 0;
        loop {
            let mut h = Sha256::new();
            h.update(b"qflow-h2g");
            h.update(bytes);
            if counter > 0 {
                h.update(counter.to_be_bytes());
            }
            let pre = BigUint::from_bytes_be(&h.finalize());
            let e = self.square_into_subgroup(&pre);
            if e.0 > BigUint::one() {
                return e;
            }
            counter += 1;
        }
    }

    /// The squaring step of hash-to-group, exposed so the modular-arithmetic
    /// oracle can check it directly.
    pub fn square_into_subgroup(&self, pre: &BigUint) -> GroupElement {
        let r = pre % &self.p;
        GroupElement((&r * &r) % &self.p)
    }

    // ---- interpolation -----------------------------------------------------

    /// Lagrange coefficient interpolating at zero for index `i` within the
    /// index set `s`.
    pub fn lagrange_coeff(&self, i: u32, s: &[u32]) -> Result<Scalar, GroupError> {
        let mut seen = std::collections::BTreeSet::new();
        for &j in s {
            if j == 0 || (BigUint::from(j) % &self.q).is_zero() {
                return Err(GroupError::BadIndex(j, "index is zero mod q"));
            }
            if !seen.insert(j) {
                return Err(GroupError::DuplicateIndex(j));
            }
        }
        if !seen.contains(&i) {
            return Err(GroupError::IndexNotInSet(i));
        }
        let xi = self.scalar_from_u64(u64::from(i));
        let mut acc = Scalar(BigUint::one() % &self.q);
        for &j in s {
            if j == i {
                continue;
            }
            let xj = self.scalar_from_u64(u64::from(j));
            let num = xj.clone();
            let den = self.scalar_sub(&xj, &xi);
            let den_inv = self
                .scalar_inv(&den)
                .ok_or(GroupError::BadIndex(j, "indices collide mod q"))?;
            acc = self.scalar_mul(&acc, &self.scalar_mul(&num, &den_inv));
        }
        Ok(acc)
    }
}

/// Miller-Rabin with a fixed base set. Deterministic for anything under
/// 3.3e24; the 2048-bit constant gets 40 rounds, plenty for a vetted prime.
pub fn is_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2_u32);
    if *n < two {
        return false;
    }
    let small: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &sp in &small {
        let spb = BigUint::from(sp);
        if *n == spb {
            return true;
        }
        if (n % &spb).is_zero() {
            return false;
        }
    }
    // n - 1 = d * 2^r
    let n_minus_1 = n - 1_u32;
    let r = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> r;
    let bases: Vec<BigUint> = small
        .iter()
        .map(|&b| BigUint::from(b))
        .chain((0..28_u32).map(|k| BigUint::from(41_u32 + 2 * k)))
        .collect();
    'outer: for a in bases {
        if a >= n_minus_1 {
            continue;
        }
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..r {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn toy_params_satisfy_invariants() {
        let p = GroupParams::toy();
        let checked = GroupParams::from_parts(
            p.p().clone(),
            p.q().clone(),
            p.generator().value().clone(),
            Profile::Toy,
        );
        assert!(checked.is_ok());
    }

    #[test]
    fn modp_2048_satisfies_invariants() {
        let p = GroupParams::modp_2048();
        assert!(is_prime(p.p()));
        assert!(is_prime(p.q()));
        assert_eq!(p.p(), &((p.q() << 1) + 1_u32));
        assert_eq!(p.generator().value().modpow(p.q(), p.p()), BigUint::one());
    }

    #[test]
    fn bad_params_rejected() {
        // 15 is composite
        let r = GroupParams::from_parts(
            BigUint::from(15_u32),
            BigUint::from(7_u32),
            BigUint::from(4_u32),
            Profile::Toy,
        );
        assert_eq!(r.unwrap_err(), GroupError::PNotPrime);
        // p = 23 but q = 7 is not (p-1)/2
        let r = GroupParams::from_parts(
            BigUint::from(23_u32),
            BigUint::from(7_u32),
            BigUint::from(4_u32),
            Profile::Toy,
        );
        assert_eq!(r.unwrap_err(), GroupError::NotSafePrime);
        // g = 5 has order 22, not 11
        let r = GroupParams::from_parts(
            BigUint::from(23_u32),
            BigUint::from(11_u32),
            BigUint::from(5_u32),
            Profile::Toy,
        );
        assert_eq!(r.unwrap_err(), GroupError::BadGenerator);
    }

    #[test]
    fn hash_to_group_deterministic_and_in_subgroup() {
        let p = GroupParams::toy();
        let a = p.hash_to_group(b"any input");
        let b = p.hash_to_group(b"any input");
        assert_eq!(a, b);
        for input in [&b"x"[..], b"y", b"z", b"", b"0123456789"] {
            let e = p.hash_to_group(input);
            // subgroup closure: o^11 = 1 mod 23
            assert_eq!(e.value().modpow(p.q(), p.p()), BigUint::one());
            assert!(e.value() > &BigUint::one());
        }
    }

    #[test]
    fn squaring_step_matches_modular_oracle() {
        // pre-hash integer 5 squares to 25 mod 23 = 2
        let p = GroupParams::toy();
        let e = p.square_into_subgroup(&BigUint::from(5_u32));
        assert_eq!(e.value(), &BigUint::from(2_u32));
    }

    #[test]
    fn subgroup_closure_for_all_exponents() {
        let p = GroupParams::toy();
        for x in 0..11_u64 {
            let e = p.g_pow(&p.scalar_from_u64(x));
            assert_eq!(e.value().modpow(p.q(), p.p()), BigUint::one());
        }
    }

    #[test]
    fn lagrange_singleton_is_one() {
        let p = GroupParams::toy();
        let l = p.lagrange_coeff(1, &[1]).unwrap();
        assert_eq!(l.value(), &BigUint::one());
    }

    #[test]
    fn lagrange_hand_oracle_q11() {
        // q=11, S={1,3}: lambda_1 = 3*(3-1)^-1 = 3*6 = 18 = 7;
        // lambda_3 = 1*(1-3)^-1 = (-2)^-1 = 9^-1 = 5.
        let p = GroupParams::toy();
        let l1 = p.lagrange_coeff(1, &[1, 3]).unwrap();
        let l3 = p.lagrange_coeff(3, &[1, 3]).unwrap();
        assert_eq!(l1.value(), &BigUint::from(7_u32));
        assert_eq!(l3.value(), &BigUint::from(5_u32));
    }

    #[test]
    fn lagrange_errors() {
        let p = GroupParams::toy();
        assert!(matches!(
            p.lagrange_coeff(2, &[1, 3]),
            Err(GroupError::IndexNotInSet(2))
        ));
        assert!(matches!(
            p.lagrange_coeff(1, &[1, 3, 3]),
            Err(GroupError::DuplicateIndex(3))
        ));
        assert!(matches!(
            p.lagrange_coeff(1, &[1, 11]),
            Err(GroupError::BadIndex(11, _))
        ));
        assert!(matches!(
            p.lagrange_coeff(0, &[0, 1]),
            Err(GroupError::BadIndex(0, _))
        ));
    }

    /// Brute-force polynomial evaluation oracle: interpolation at zero
    /// recovers f(0) for every k-subset and every small polynomial.
    #[test]
    fn interpolation_identity_over_q11() {
        let p = GroupParams::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let indices: Vec<u32> = (1..=7).collect();
        for k in 1..=5_usize {
            for _ in 0..20 {
                // random degree-(k-1) polynomial over Z_11
                let coeffs: Vec<Scalar> =
                    (0..k).map(|_| p.scalar_random(&mut rng)).collect();
                let eval = |x: u64| -> Scalar {
                    let xs = p.scalar_from_u64(x);
                    let mut acc = p.scalar_zero();
                    let mut pow = p.scalar_from_u64(1);
                    for c in &coeffs {
                        acc = p.scalar_add(&acc, &p.scalar_mul(c, &pow));
                        pow = p.scalar_mul(&pow, &xs);
                    }
                    acc
                };
                for subset in k_subsets(&indices, k) {
                    let mut acc = p.scalar_zero();
                    for &i in &subset {
                        let l = p.lagrange_coeff(i, &subset).unwrap();
                        acc = p.scalar_add(&acc, &p.scalar_mul(&l, &eval(u64::from(i))));
                    }
                    assert_eq!(acc, eval(0), "k={k} subset={subset:?}");
                }
            }
        }
    }

    fn k_subsets(items: &[u32], k: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn recur(items: &[u32], k: usize, start: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..items.len() {
                cur.push(items[i]);
                recur(items, k, i + 1, cur, out);
                cur.pop();
            }
        }
        recur(items, k, 0, &mut cur, &mut out);
        out
    }
}
