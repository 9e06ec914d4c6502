//! Binary kernel tensor files and CSV export.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 8 | magic `FRPKERNL` |
//! | 8 | 2 | format version (u16) |
//! | 10 | 1 | source: 0 analytical, 1 nbgd |
//! | 11 | 1 | presence flags: grid, power, seed, convergence (bits 0..3) |
//! | 12 | 4 | memory M (u32) |
//! | 16 | 8 | grid t_min (f64, seconds) |
//! | 24 | 8 | grid t_max (f64, seconds) |
//! | 32 | 8 | grid n_t (u64) |
//! | 40 | 8 | grid n_z (u64) |
//! | 48 | 8 | training power (f64, dBm) |
//! | 56 | 8 | seed (u64) |
//! | 64 | 8 | convergence certificate (f64) |
//! | 72 | 8 | value count (u64), must equal (2M+1)^3 |
//! | 80 | 16 per value | re, im (f64 each) in canonical order |
//! | end | 8 | first 8 bytes of SHA-256 over everything before |
//!
//! Fields whose presence flag is clear are written as zero, and readers
//! reject them otherwise. Kernel values must be finite.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::{kernel_count, IntegrationGrid, KernelSource, KernelTensor, Provenance};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FRPKERNL";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 80;
const CHECKSUM_LEN: usize = 8;
/// Rejects headers that would demand absurd allocations.
const MAX_MEMORY: u32 = 64;

const FLAG_GRID: u8 = 1;
const FLAG_POWER: u8 = 2;
const FLAG_SEED: u8 = 4;
const FLAG_CONVERGENCE: u8 = 8;

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

pub fn encode_tensor(tensor: &KernelTensor) -> Vec<u8> {
    let p = &tensor.provenance;
    let mut flags = 0u8;
    let grid = p.grid.unwrap_or(IntegrationGrid {
        t_min: 0.0,
        t_max: 0.0,
        n_t: 0,
        n_z: 0,
    });
    if p.grid.is_some() {
        flags |= FLAG_GRID;
    }
    if p.power_dbm.is_some() {
        flags |= FLAG_POWER;
    }
    if p.seed.is_some() {
        flags |= FLAG_SEED;
    }
    if p.convergence.is_some() {
        flags |= FLAG_CONVERGENCE;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * tensor.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match p.source {
        KernelSource::Analytical => 0,
        KernelSource::Nbgd => 1,
    });
    out.push(flags);
    out.extend_from_slice(&(tensor.memory() as u32).to_le_bytes());
    out.extend_from_slice(&grid.t_min.to_le_bytes());
    out.extend_from_slice(&grid.t_max.to_le_bytes());
    out.extend_from_slice(&(grid.n_t as u64).to_le_bytes());
    out.extend_from_slice(&(grid.n_z as u64).to_le_bytes());
    out.extend_from_slice(&p.power_dbm.unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&p.seed.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&p.convergence.unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
    for v in tensor.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<KernelTensor> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(Error::Format(format!("kernel file too short: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("not a kernel file (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = u16::from_le_bytes(r.take());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let [source, flags] = r.take::<2>();
    let source = match source {
        0 => KernelSource::Analytical,
        1 => KernelSource::Nbgd,
        s => return Err(Error::Format(format!("unknown kernel source tag {s}"))),
    };
    if flags & !(FLAG_GRID | FLAG_POWER | FLAG_SEED | FLAG_CONVERGENCE) != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
    }
    let memory = u32::from_le_bytes(r.take());
    if memory > MAX_MEMORY {
        return Err(Error::Format(format!("memory {memory} exceeds limit {MAX_MEMORY}")));
    }
    let t_min = r.f64();
    let t_max = r.f64();
    let n_t = r.u64();
    let n_z = r.u64();
    let power = r.f64();
    let seed = r.u64();
    let convergence = r.f64();
    let count = r.u64();
    let expected = kernel_count(memory as usize);
    if count != expected as u64 {
        return Err(Error::Format(format!(
            "value count {count} does not match memory {memory} ({expected})"
        )));
    }
    let total = HEADER_LEN + 16 * expected + CHECKSUM_LEN;
    if bytes.len() != total {
        return Err(Error::Format(format!(
            "kernel file is {} bytes, expected {total}",
            bytes.len()
        )));
    }
    let body_end = total - CHECKSUM_LEN;
    if checksum(&bytes[..body_end]) != bytes[body_end..] {
        return Err(Error::Format("kernel file checksum mismatch".into()));
    }
    let absent_nonzero = (flags & FLAG_GRID == 0 && (t_min.to_bits() | t_max.to_bits() | n_t | n_z) != 0)
        || (flags & FLAG_POWER == 0 && power.to_bits() != 0)
        || (flags & FLAG_SEED == 0 && seed != 0)
        || (flags & FLAG_CONVERGENCE == 0 && convergence.to_bits() != 0);
    if absent_nonzero {
        return Err(Error::Format("a field flagged absent is not zero".into()));
    }
    let values: Vec<Complex64> = (0..expected)
        .map(|_| {
            let re = r.f64();
            let im = r.f64();
            Complex64::new(re, im)
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite kernel value".into()));
    }
    let grid = if flags & FLAG_GRID != 0 {
        let n_t = usize::try_from(n_t).map_err(|_| Error::Format("n_t overflows".into()))?;
        let n_z = usize::try_from(n_z).map_err(|_| Error::Format("n_z overflows".into()))?;
        Some(IntegrationGrid { t_min, t_max, n_t, n_z })
    } else {
        None
    };
    let provenance = Provenance {
        source,
        grid,
        power_dbm: (flags & FLAG_POWER != 0).then_some(power),
        seed: (flags & FLAG_SEED != 0).then_some(seed),
        convergence: (flags & FLAG_CONVERGENCE != 0).then_some(convergence),
    };
    Ok(KernelTensor::new(memory as usize, values)?.with_provenance(provenance))
}

/// Writes through a sibling temporary file so readers never see a partial
/// tensor.
pub fn save_tensor(path: &Path, tensor: &KernelTensor) -> Result<()> {
    crate::experiment::write_atomic(path, &encode_tensor(tensor))
}

pub fn load_tensor(path: &Path) -> Result<KernelTensor> {
    decode_tensor(&fs::read(path)?)
}

/// One row per kernel: `k,l,m,re,im,abs`.
pub fn write_tensor_csv<W: Write>(writer: W, tensor: &KernelTensor) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "l", "m", "re", "im", "abs"])?;
    for ((k, l, m), v) in tensor.indices().zip(tensor.values()) {
        w.write_record([
            k.to_string(),
            l.to_string(),
            m.to_string(),
            format!("{:e}", v.re),
            format!("{:e}", v.im),
            format!("{:e}", v.norm()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(memory: usize) -> KernelTensor {
        let values = (0..kernel_count(memory))
            .map(|i| Complex64::new(i as f64 * 1.5e14, -(i as f64).sqrt() * 3e13))
            .collect();
        KernelTensor::new(memory, values).unwrap().with_provenance(Provenance {
            source: KernelSource::Nbgd,
            grid: Some(IntegrationGrid::new(-1e-9, 1e-9, 512, 101).unwrap()),
            power_dbm: Some(13.0),
            seed: Some(7),
            convergence: Some(2.5e-4),
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for m in 0..3 {
            let t = sample(m);
            assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
        }
        let bare = KernelTensor::zeros(1);
        assert_eq!(decode_tensor(&encode_tensor(&bare)).unwrap(), bare);
    }

    #[test]
    fn memory_zero_holds_one_value() {
        let bytes = encode_tensor(&sample(0));
        assert_eq!(bytes.len(), HEADER_LEN + 16 + CHECKSUM_LEN);
        assert_eq!(decode_tensor(&bytes).unwrap().len(), 1);
    }

    #[test]
    fn loaded_tensor_rejects_out_of_range_index() {
        let t = decode_tensor(&encode_tensor(&sample(1))).unwrap();
        assert!(matches!(t.get(2, 0, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn corruption_is_detected() {
        let good = encode_tensor(&sample(1));
        let mut flipped = good.clone();
        flipped[HEADER_LEN + 3] ^= 0x10;
        assert!(matches!(decode_tensor(&flipped), Err(Error::Format(_))));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_tensor(&magic), Err(Error::Format(_))));
        assert!(decode_tensor(&good[..good.len() - 1]).is_err());
        assert!(decode_tensor(&good[..20]).is_err());
    }

    /// Re-seals `bytes` after an edit so only the edited field is at fault.
    fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
        let end = bytes.len() - CHECKSUM_LEN;
        let sum = checksum(&bytes[..end]);
        bytes[end..].copy_from_slice(&sum);
        bytes
    }

    #[test]
    fn non_canonical_files_are_rejected() {
        let mut bytes = encode_tensor(&KernelTensor::zeros(0));
        bytes[56] = 1; // seed flagged absent but nonzero
        assert!(matches!(decode_tensor(&reseal(bytes)), Err(Error::Format(_))));
        let mut bytes = encode_tensor(&KernelTensor::zeros(0));
        bytes[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&reseal(bytes)), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode_tensor(&sample(0));
        bytes[8] = 9;
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::Version { found: 9, supported: 1 })
        ));
    }

    #[test]
    fn csv_has_one_row_per_kernel() {
        let mut buf = Vec::new();
        write_tensor_csv(&mut buf, &sample(1)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 28);
        assert!(text.starts_with("k,l,m,re,im,abs\n-1,-1,-1,"));
    }
}
