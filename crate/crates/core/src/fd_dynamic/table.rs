//! The calibrated threshold table and its binary file format.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `PFDT`                            |
//! | 4      | 2    | format version (1)                      |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 8    | η (f64)                                 |
//! | 16     | 4    | d (u32)                                 |
//! | 20     | 4    | b (u32)                                 |
//! | 24     | 4    | M, bandwidth at calibration (u32)       |
//! | 28     | 4    | N, number of agents (u32)               |
//! | 32     | 8    | quantization scale (f64)                |
//! | 40     | 8    | calibration seed (u64)                  |
//! | 48     | 8    | pooled sample count (u64)               |
//! | 56     | 8    | static-detector threshold κ (f64)       |
//! | 64     | 16   | agent model signature                   |
//! | 80     | 8    | entry count `b·b·d·2` (u64)             |
//! | 88     | 4·n  | entries (f32)                           |
//!
//! Entry `(T1, T2, H, a)` sits at index `(((T1−1)·b + T2−1)·d + H−1)·2 + a`.
//! `+∞` marks "never alarm"; a quiet NaN marks the unused `T1 > T2` cells.

use std::path::Path;

use crate::error::{Error, Result};

pub const TABLE_MAGIC: [u8; 4] = *b"PFDT";
pub const TABLE_VERSION: u16 = 1;
const HEADER_LEN: usize = 88;
const INVALID_BITS: u32 = 0x7fc0_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct TableHeader {
    pub eta: f64,
    pub d: u32,
    pub b: u32,
    pub bandwidth: u32,
    pub n_agents: u32,
    pub scale: f64,
    pub seed: u64,
    pub sample_count: u64,
    pub sfd_kappa: f64,
    pub signature: [u8; 16],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub header: TableHeader,
    entries: Vec<f32>,
}

impl ThresholdTable {
    /// Table with every valid cell set to `fill` and `T1 > T2` cells invalid.
    pub fn filled(header: TableHeader, fill: f32) -> Self {
        let (b, d) = (header.b as usize, header.d as usize);
        let mut entries = vec![fill; b * b * d * 2];
        for t1 in 1..=b {
            for t2 in 1..t1 {
                for h in 1..=d {
                    for a in 0..2 {
                        entries[index(b, d, t1, t2, h, a)] = f32::from_bits(INVALID_BITS);
                    }
                }
            }
        }
        ThresholdTable { header, entries }
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    fn check_index(&self, t1: u32, t2: u32, h: usize, a: usize) -> Result<()> {
        if t1 < 1 || t2 < t1 {
            return Err(Error::InvalidIndex(format!("need 1 ≤ T1 ≤ T2, got T1={t1}, T2={t2}")));
        }
        if h < 1 || h > self.header.d as usize {
            return Err(Error::InvalidIndex(format!("H={h} outside 1..={}", self.header.d)));
        }
        if a > 1 {
            return Err(Error::InvalidIndex(format!("last-period flag {a} not in {{0, 1}}")));
        }
        Ok(())
    }

    /// Threshold for a period; `+∞` when `T2 > b`.
    pub fn lookup(&self, t1: u32, t2: u32, h: usize, a: usize) -> Result<f64> {
        self.check_index(t1, t2, h, a)?;
        Ok(self.threshold(t1, t2, h, a == 1))
    }

    /// Unchecked lookup for indices produced by the partitioner.
    #[inline]
    pub(crate) fn threshold(&self, t1: u32, t2: u32, h: usize, is_last: bool) -> f64 {
        let b = self.header.b;
        if t2 > b {
            return f64::INFINITY;
        }
        let idx = index(b as usize, self.header.d as usize, t1 as usize, t2 as usize, h, is_last as usize);
        self.entries[idx] as f64
    }

    pub fn set(&mut self, t1: u32, t2: u32, h: usize, a: usize, value: f32) -> Result<()> {
        self.check_index(t1, t2, h, a)?;
        if t2 > self.header.b {
            return Err(Error::InvalidIndex(format!("T2={t2} beyond b={}", self.header.b)));
        }
        let idx = index(self.header.b as usize, self.header.d as usize, t1 as usize, t2 as usize, h, a);
        self.entries[idx] = value;
        Ok(())
    }

    /// Refuses a table calibrated for different detector parameters.
    pub fn check_compatible(&self, eta: f64, d: usize, b: usize, scale: f64) -> Result<()> {
        let h = &self.header;
        let mut problems = Vec::new();
        if h.eta.to_bits() != eta.to_bits() {
            problems.push(format!("eta {} vs {}", h.eta, eta));
        }
        if h.d as usize != d {
            problems.push(format!("d {} vs {}", h.d, d));
        }
        if h.b as usize != b {
            problems.push(format!("b {} vs {}", h.b, b));
        }
        if h.scale.to_bits() != scale.to_bits() {
            problems.push(format!("quantization scale {} vs {}", h.scale, scale));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::TableMismatch(problems.join(", ")))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.entries.len());
        out.extend_from_slice(&TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&h.eta.to_le_bytes());
        out.extend_from_slice(&h.d.to_le_bytes());
        out.extend_from_slice(&h.b.to_le_bytes());
        out.extend_from_slice(&h.bandwidth.to_le_bytes());
        out.extend_from_slice(&h.n_agents.to_le_bytes());
        out.extend_from_slice(&h.scale.to_le_bytes());
        out.extend_from_slice(&h.seed.to_le_bytes());
        out.extend_from_slice(&h.sample_count.to_le_bytes());
        out.extend_from_slice(&h.sfd_kappa.to_le_bytes());
        out.extend_from_slice(&h.signature);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::TableFormat(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(fmt("file shorter than header"));
        }
        if bytes[0..4] != TABLE_MAGIC {
            return Err(fmt("bad magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_bits(u64_at(o));
        let version = u16_at(4);
        if version != TABLE_VERSION {
            return Err(Error::TableFormat(format!("unsupported version {version}")));
        }
        let header = TableHeader {
            eta: f64_at(8),
            d: u32_at(16),
            b: u32_at(20),
            bandwidth: u32_at(24),
            n_agents: u32_at(28),
            scale: f64_at(32),
            seed: u64_at(40),
            sample_count: u64_at(48),
            sfd_kappa: f64_at(56),
            signature: bytes[64..80].try_into().unwrap(),
        };
        let count = u64_at(80) as usize;
        let expected = (header.b as usize) * (header.b as usize) * (header.d as usize) * 2;
        if count != expected {
            return Err(Error::TableFormat(format!(
                "entry count {count} does not match b·b·d·2 = {expected}"
            )));
        }
        if bytes.len() != HEADER_LEN + 4 * count {
            return Err(Error::TableFormat(format!(
                "expected {} bytes, found {}",
                HEADER_LEN + 4 * count,
                bytes.len()
            )));
        }
        let entries = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(ThresholdTable { header, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Bitwise equality, including NaN markers.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

#[inline]
fn index(b: usize, d: usize, t1: usize, t2: usize, h: usize, a: usize) -> usize {
    (((t1 - 1) * b + (t2 - 1)) * d + (h - 1)) * 2 + a
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn header(d: u32, b: u32) -> TableHeader {
        TableHeader {
            eta: 0.01,
            d,
            b,
            bandwidth: 2,
            n_agents: 6,
            scale: 0.5,
            seed: 9,
            sample_count: 1234,
            sfd_kappa: 77.0,
            signature: [7; 16],
        }
    }

    #[test]
    fn beyond_cap_is_infinite() {
        let t = ThresholdTable::filled(header(10, 40), 5.0);
        assert_eq!(t.lookup(1, 41, 1, 0).unwrap(), f64::INFINITY);
        assert_eq!(t.lookup(3, 100, 10, 1).unwrap(), f64::INFINITY);
        assert_eq!(t.lookup(1, 1, 4, 1).unwrap(), 5.0);
        assert_eq!(t.lookup(1, 1, 4, 1).unwrap(), t.lookup(1, 1, 4, 1).unwrap());
    }

    #[test]
    fn invalid_indices_are_errors() {
        let t = ThresholdTable::filled(header(10, 40), 5.0);
        assert!(matches!(t.lookup(3, 2, 1, 0), Err(Error::InvalidIndex(_))));
        assert!(t.lookup(0, 2, 1, 0).is_err());
        assert!(t.lookup(1, 2, 11, 0).is_err());
        assert!(t.lookup(1, 2, 0, 0).is_err());
        assert!(t.lookup(1, 2, 1, 2).is_err());
    }

    #[test]
    fn dimensions_are_b_b_d_2() {
        let t = ThresholdTable::filled(header(10, 40), 5.0);
        assert_eq!(t.entries().len(), 40 * 40 * 10 * 2);
        assert!(t.entries()[index(40, 10, 2, 1, 1, 0)].is_nan());
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let mut t = ThresholdTable::filled(header(3, 4), 12.5);
        t.set(1, 4, 2, 1, f32::INFINITY).unwrap();
        t.set(2, 3, 3, 0, 0.1).unwrap();
        let bytes = t.to_bytes();
        let back = ThresholdTable::from_bytes(&bytes).unwrap();
        assert!(t.bit_eq(&back));
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.header, t.header);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let t = ThresholdTable::filled(header(3, 4), 1.0);
        let mut bytes = t.to_bytes();
        assert!(ThresholdTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(ThresholdTable::from_bytes(&bytes).is_err());
        let mut bytes = t.to_bytes();
        bytes[4] = 9;
        assert!(ThresholdTable::from_bytes(&bytes).is_err());
    }

    #[test]
    fn compatibility_check() {
        let t = ThresholdTable::filled(header(10, 40), 1.0);
        assert!(t.check_compatible(0.01, 10, 40, 0.5).is_ok());
        assert!(matches!(t.check_compatible(0.02, 10, 40, 0.5), Err(Error::TableMismatch(_))));
        assert!(t.check_compatible(0.01, 9, 40, 0.5).is_err());
        assert!(t.check_compatible(0.01, 10, 41, 0.5).is_err());
        assert!(t.check_compatible(0.01, 10, 40, 0.25).is_err());
    }
}
