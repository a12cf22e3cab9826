//! Polar encoding over GF(2), the Kronecker generator matrix and CRC.
//!
//! Codewords are `c = u · G^{⊗n}` with `G = [[1,0],[1,1]]` in natural index
//! order; no bit-reversal permutation is applied anywhere in the crate.

use std::fmt;
use std::ops::{BitXor, Deref, DerefMut};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sequence of GF(2) elements, one `u8` (0 or 1) per bit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector(vec![0; len])
    }

    /// Builds from arbitrary bytes, reducing each mod 2.
    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        BitVector(bits.into_iter().map(|b| b & 1).collect())
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn concat(&self, other: &BitVector) -> BitVector {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        BitVector(v)
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl From<Vec<u8>> for BitVector {
    fn from(v: Vec<u8>) -> Self {
        BitVector::from_bits(v)
    }
}

impl Deref for BitVector {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl DerefMut for BitVector {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }
}

impl BitXor for &BitVector {
    type Output = BitVector;
    fn bitxor(self, rhs: &BitVector) -> BitVector {
        assert_eq!(self.len(), rhs.len(), "xor of unequal-length bit vectors");
        BitVector(self.iter().zip(rhs.iter()).map(|(a, b)| a ^ b).collect())
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// CRC generator polynomial in hexadecimal convention: the leading `x^m`
/// coefficient is implicit, so `x^4 + x + 1` is written `0x3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CrcPoly(pub u64);

impl CrcPoly {
    pub const CRC4_0X3: CrcPoly = CrcPoly(0x3);
    pub const CRC32_0X04C11DB7: CrcPoly = CrcPoly(0x04C1_1DB7);

    pub fn to_hex(self) -> String {
        format!("0x{:X}", self.0)
    }
}

impl FromStr for CrcPoly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t
            .strip_prefix("0x")
            .or_else(|| t.strip_prefix("0X"))
            .unwrap_or(t);
        u64::from_str_radix(digits, 16)
            .map(CrcPoly)
            .map_err(|e| Error::Argument(format!("bad CRC polynomial {s:?}: {e}")))
    }
}

impl Serialize for CrcPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CrcPoly {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for CrcPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Identifies a code family `P(N, K, m)`.
///
/// `K = N` (a rate-one code) is accepted: it is the initial state of the
/// construction MDP and the uncoded calibration point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodeSpec {
    n: usize,
    k: usize,
    m: usize,
    crc: Option<CrcPoly>,
}

impl CodeSpec {
    pub fn new(n: usize, k: usize, m: usize, crc: Option<CrcPoly>) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Argument(format!(
                "blocklength N = {n} must be a power of two >= 2"
            )));
        }
        if k > n {
            return Err(Error::Argument(format!("K = {k} exceeds N = {n}")));
        }
        if m >= k {
            return Err(Error::Argument(format!("need m < K, got m = {m}, K = {k}")));
        }
        let crc = if m == 0 {
            None
        } else {
            let poly = crc.ok_or_else(|| {
                Error::Config(format!("m = {m} CRC bits requested but no polynomial given"))
            })?;
            if m < 64 && poly.0 >> m != 0 {
                return Err(Error::Config(format!(
                    "CRC polynomial {poly} does not fit degree {m}"
                )));
            }
            Some(poly)
        };
        Ok(CodeSpec { n, k, m, crc })
    }

    /// Blocklength `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Non-frozen count `K`, CRC bits included.
    pub fn k(&self) -> usize {
        self.k
    }

    /// CRC length `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn crc(&self) -> Option<CrcPoly> {
        self.crc
    }

    pub fn log2_n(&self) -> u32 {
        self.n.trailing_zeros()
    }

    /// Number of payload bits `K - m`.
    pub fn info_len(&self) -> usize {
        self.k - self.m
    }

    /// Code rate `(K - m) / N`.
    pub fn rate(&self) -> f64 {
        self.info_len() as f64 / self.n as f64
    }

    /// Same `N`, `m`, polynomial with a different `K`.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        CodeSpec::new(self.n, k, self.m, self.crc)
    }
}

/// A frozen / non-frozen partition of `[N]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Construction {
    spec: CodeSpec,
    info_set: Vec<usize>,
    frozen_mask: Vec<bool>,
}

impl Construction {
    /// `info_set` may be in any order; it is stored sorted.
    pub fn new(spec: CodeSpec, mut info_set: Vec<usize>) -> Result<Self> {
        info_set.sort_unstable();
        if info_set.len() != spec.k() {
            return Err(Error::Argument(format!(
                "info set has {} entries, expected K = {}",
                info_set.len(),
                spec.k()
            )));
        }
        let mut frozen_mask = vec![true; spec.n()];
        for &i in &info_set {
            if i >= spec.n() {
                return Err(Error::Argument(format!("index {i} out of range for N = {}", spec.n())));
            }
            if !frozen_mask[i] {
                return Err(Error::Argument(format!("duplicate info index {i}")));
            }
            frozen_mask[i] = false;
        }
        Ok(Construction {
            spec,
            info_set,
            frozen_mask,
        })
    }

    /// Builds from a frozen mask (`true` = frozen).
    pub fn from_frozen_mask(spec: CodeSpec, frozen: &[bool]) -> Result<Self> {
        if frozen.len() != spec.n() {
            return Err(Error::Argument(format!(
                "frozen mask length {} != N = {}",
                frozen.len(),
                spec.n()
            )));
        }
        let info = (0..spec.n()).filter(|&i| !frozen[i]).collect();
        Construction::new(spec, info)
    }

    pub fn spec(&self) -> &CodeSpec {
        &self.spec
    }

    /// Sorted non-frozen indices `I`.
    pub fn info_set(&self) -> &[usize] {
        &self.info_set
    }

    /// Sorted frozen indices `F`.
    pub fn frozen_set(&self) -> Vec<usize> {
        (0..self.spec.n()).filter(|&i| self.frozen_mask[i]).collect()
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen_mask
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen_mask[i]
    }

    /// Places payload bits and their CRC into the non-frozen positions.
    pub fn source_vector(&self, info_bits: &[u8]) -> Result<BitVector> {
        let spec = &self.spec;
        if info_bits.len() != spec.info_len() {
            return Err(Error::Argument(format!(
                "expected {} information bits, got {}",
                spec.info_len(),
                info_bits.len()
            )));
        }
        let mut u = BitVector::zeros(spec.n());
        let (data_pos, crc_pos) = self.info_set.split_at(spec.info_len());
        for (&p, &b) in data_pos.iter().zip(info_bits) {
            u[p] = b & 1;
        }
        if let Some(poly) = spec.crc() {
            let crc = crc_bits(info_bits, poly, spec.m());
            for (&p, b) in crc_pos.iter().zip(crc) {
                u[p] = b;
            }
        }
        Ok(u)
    }

    /// Reads the payload (first `K - m` non-frozen positions) out of `u`.
    pub fn extract_info(&self, u: &[u8]) -> BitVector {
        BitVector::from_bits(self.info_set[..self.spec.info_len()].iter().map(|&p| u[p]))
    }

    /// True iff the non-frozen bits of `u` form a valid payload ∥ CRC frame.
    /// Always true when `m = 0`.
    pub fn crc_ok(&self, u: &[u8]) -> bool {
        match self.spec.crc() {
            None => true,
            Some(poly) => {
                let frame: Vec<u8> = self.info_set.iter().map(|&p| u[p]).collect();
                let (msg, tail) = frame.split_at(self.spec.info_len());
                crc_bits(msg, poly, self.spec.m()) == tail
            }
        }
    }
}

/// `n`-th Kronecker power of `[[1,0],[1,1]]` as a dense 0/1 matrix.
pub fn kronecker_generator(n: u32) -> Result<Vec<Vec<u8>>> {
    // a dense 2^n × 2^n matrix beyond 2^15 rows is not addressable in practice
    if n >= 16 {
        return Err(Error::Size(format!(
            "Kronecker power n = {n} gives a 2^{n} x 2^{n} matrix, too large"
        )));
    }
    let size = 1usize << n;
    // G^{⊗n}[i][j] = 1 iff j's bits are a subset of i's bits
    Ok((0..size)
        .map(|i| (0..size).map(|j| u8::from(i & j == j)).collect())
        .collect())
}

/// In-place `x ← x · G^{⊗n}` over GF(2). `x.len()` must be a power of two.
///
/// The transform is its own inverse.
pub fn polar_transform(x: &mut [u8]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut half = n / 2;
    while half >= 1 {
        for block in x.chunks_exact_mut(2 * half) {
            let (top, bottom) = block.split_at_mut(half);
            for (t, b) in top.iter_mut().zip(bottom.iter()) {
                *t ^= *b;
            }
        }
        half /= 2;
    }
}

/// Encodes `info_bits` (length `K - m`) under `construction`.
pub fn encode(construction: &Construction, info_bits: &[u8]) -> Result<BitVector> {
    let mut u = construction.source_vector(info_bits)?;
    polar_transform(&mut u);
    Ok(u)
}

fn crc_bits(message: &[u8], poly: CrcPoly, degree: usize) -> Vec<u8> {
    let mut reg: u64 = 0;
    let mask: u64 = if degree == 64 { u64::MAX } else { (1u64 << degree) - 1 };
    for &b in message {
        let top = ((reg >> (degree - 1)) & 1) as u8 ^ (b & 1);
        reg = (reg << 1) & mask;
        if top == 1 {
            reg ^= poly.0;
        }
    }
    (0..degree)
        .rev()
        .map(|i| ((reg >> i) & 1) as u8)
        .collect()
}

/// Remainder of `message · x^degree` modulo the generator, MSB first.
/// Register starts at zero and no final XOR is applied.
pub fn crc_compute(message: &[u8], poly: CrcPoly, degree: usize) -> Result<BitVector> {
    if degree == 0 || degree > 64 {
        return Err(Error::Config(format!("CRC degree {degree} outside 1..=64")));
    }
    if degree < 64 && poly.0 >> degree != 0 {
        return Err(Error::Config(format!(
            "polynomial {poly} inconsistent with degree {degree}"
        )));
    }
    Ok(BitVector(crc_bits(message, poly, degree)))
}

/// True iff the last `degree` bits are the CRC of the prefix.
pub fn crc_check(bits: &[u8], poly: CrcPoly, degree: usize) -> Result<bool> {
    if bits.len() <= degree {
        return Err(Error::Argument(format!(
            "frame of {} bits is not longer than CRC degree {degree}",
            bits.len()
        )));
    }
    let (msg, tail) = bits.split_at(bits.len() - degree);
    Ok(crc_compute(msg, poly, degree)?.as_ref() == tail)
}

impl AsRef<[u8]> for BitVector {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// On-disk JSON form of a construction.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConstructionFile {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crc_poly: Option<String>,
    pub info_set: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ConstructionFile {
    pub fn from_construction(c: &Construction, provenance: Option<serde_json::Value>) -> Self {
        let spec = c.spec();
        ConstructionFile {
            n: spec.n(),
            k: spec.k(),
            m: spec.m(),
            crc_poly: spec.crc().map(|p| p.to_hex()),
            info_set: c.info_set().to_vec(),
            provenance,
        }
    }

    pub fn to_construction(&self) -> Result<Construction> {
        let crc = self.crc_poly.as_deref().map(str::parse).transpose()?;
        let spec = CodeSpec::new(self.n, self.k, self.m, crc)?;
        let mut sorted = self.info_set.clone();
        sorted.sort_unstable();
        if sorted != self.info_set {
            return Err(Error::Format("info_set must be sorted ascending".into()));
        }
        Construction::new(spec, self.info_set.clone())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("construction serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, m: usize) -> CodeSpec {
        let crc = (m > 0).then_some(CrcPoly::CRC4_0X3);
        CodeSpec::new(n, k, m, crc).unwrap()
    }

    #[test]
    fn kronecker_small_powers() {
        assert_eq!(kronecker_generator(0).unwrap(), vec![vec![1]]);
        assert_eq!(kronecker_generator(1).unwrap(), vec![vec![1, 0], vec![1, 1]]);
        let g2 = kronecker_generator(2).unwrap();
        assert_eq!(
            g2,
            vec![
                vec![1, 0, 0, 0],
                vec![1, 1, 0, 0],
                vec![1, 0, 1, 0],
                vec![1, 1, 1, 1]
            ]
        );
        assert_eq!(g2.iter().flatten().filter(|&&b| b == 1).count(), 9);
        assert!(matches!(kronecker_generator(40), Err(Error::Size(_))));
    }

    #[test]
    fn kronecker_is_lower_unitriangular() {
        let g = kronecker_generator(4).unwrap();
        for (i, row) in g.iter().enumerate() {
            assert_eq!(row[i], 1);
            assert!(row[i + 1..].iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn encode_examples() {
        let c = Construction::new(spec(4, 2, 0), vec![1, 3]).unwrap();
        assert_eq!(&c.source_vector(&[1, 1]).unwrap()[..], &[0, 1, 0, 1]);
        assert_eq!(&encode(&c, &[1, 1]).unwrap()[..], &[0, 0, 1, 1]);

        let c = Construction::new(spec(2, 2, 0), vec![0, 1]).unwrap();
        assert_eq!(&encode(&c, &[1, 1]).unwrap()[..], &[0, 1]);

        let c = Construction::new(spec(8, 5, 4), vec![3, 5, 6, 7, 4]).unwrap();
        assert_eq!(encode(&c, &[0]).unwrap().weight(), 0);
        assert!(matches!(encode(&c, &[0, 1]), Err(Error::Argument(_))));
    }

    #[test]
    fn crc_examples() {
        let p = CrcPoly::CRC4_0X3;
        assert_eq!(&crc_compute(&[0, 0, 0, 0], p, 4).unwrap()[..], &[0, 0, 0, 0]);
        assert_eq!(&crc_compute(&[1], p, 4).unwrap()[..], &[0, 0, 1, 1]);
        assert_eq!(&crc_compute(&[1, 0], p, 4).unwrap()[..], &[0, 1, 1, 0]);
        assert!(crc_check(&[1, 0, 0, 1, 1], p, 4).unwrap());
        assert!(crc_check(&[0; 9], p, 4).unwrap());
        assert!(!crc_check(&[1, 0, 0, 1, 0], p, 4).unwrap());
        assert!(crc_check(&[0, 0, 0, 0], p, 4).is_err());
        assert!(matches!(crc_compute(&[1], CrcPoly(0x13), 4), Err(Error::Config(_))));
    }

    #[test]
    fn crc_poly_hex_convention() {
        assert_eq!("0x3".parse::<CrcPoly>().unwrap(), CrcPoly(3));
        assert_eq!("0x04C11DB7".parse::<CrcPoly>().unwrap(), CrcPoly::CRC32_0X04C11DB7);
        assert_eq!(CrcPoly::CRC32_0X04C11DB7.to_hex(), "0x4C11DB7");
        assert!("zz".parse::<CrcPoly>().is_err());
    }

    #[test]
    fn code_spec_validation() {
        assert!(CodeSpec::new(6, 3, 0, None).is_err());
        assert!(CodeSpec::new(8, 4, 4, Some(CrcPoly(3))).is_err());
        assert!(CodeSpec::new(8, 9, 0, None).is_err());
        assert!(CodeSpec::new(8, 6, 4, None).is_err());
        let s = CodeSpec::new(8, 8, 0, Some(CrcPoly(3))).unwrap();
        assert_eq!(s.crc(), None);
        assert!((spec(64, 32, 4).rate() - 28.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn construction_partition() {
        let c = Construction::new(spec(8, 3, 0), vec![7, 3, 5]).unwrap();
        assert_eq!(c.info_set(), &[3, 5, 7]);
        assert_eq!(c.frozen_set(), vec![0, 1, 2, 4, 6]);
        assert!(Construction::new(spec(8, 3, 0), vec![7, 7, 5]).is_err());
        assert!(Construction::new(spec(8, 3, 0), vec![7, 8, 5]).is_err());
    }

    #[test]
    fn construction_file_round_trip() {
        let c = Construction::new(spec(16, 8, 4), vec![3, 5, 6, 7, 11, 13, 14, 15]).unwrap();
        let f = ConstructionFile::from_construction(&c, None);
        let json = f.to_json();
        assert!(json.contains("\"crc_poly\": \"0x3\""));
        let back = ConstructionFile::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        assert_eq!(back.to_construction().unwrap(), c);
    }
}
