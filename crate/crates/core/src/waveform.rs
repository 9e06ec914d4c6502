//! Debug dumps of sampled dual-polarization waveforms.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 4 | magic `FFWV` |
//! | 4 | 2 | format version (u16) |
//! | 6 | 2 | reserved, zero |
//! | 8 | 8 | sample rate (f64, Hz) |
//! | 16 | 8 | samples per polarization `n` (u64) |
//! | 24 | 8n | x polarization, interleaved re/im f32 |
//! | 24 + 8n | 8n | y polarization, interleaved re/im f32 |
//!
//! Samples are stored in single precision, so a dump is for inspection and
//! not a lossless checkpoint.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ssfm::SampledField;

pub const MAGIC: &[u8; 4] = b"FFWV";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_waveform(field: &SampledField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&field.sample_rate.to_le_bytes());
    out.extend_from_slice(&(field.len() as u64).to_le_bytes());
    for v in field.x.iter().chain(&field.y) {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_waveform(bytes: &[u8]) -> Result<SampledField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("waveform dump too short: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a waveform dump (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes[6..8] != [0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let sample_rate = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::Format(format!("invalid sample rate {sample_rate}")));
    }
    let len = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = (len as u128) * 16 + HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::Format(format!(
            "waveform dump is {} bytes, header promises {expected}",
            bytes.len()
        )));
    }
    let len = len as usize;
    let samples: Vec<Complex64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite waveform sample".into()));
    }
    let (x, y) = samples.split_at(len);
    Ok(SampledField {
        x: x.to_vec(),
        y: y.to_vec(),
        sample_rate,
        symbol_rate: None,
    })
}

pub fn save_waveform(path: &Path, field: &SampledField) -> Result<()> {
    crate::experiment::write_atomic(path, &encode_waveform(field))
}

pub fn load_waveform(path: &Path) -> Result<SampledField> {
    decode_waveform(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> SampledField {
        SampledField {
            x: (0..16).map(|i| Complex64::new(i as f64 * 0.25, -0.5)).collect(),
            y: (0..16).map(|i| Complex64::new(1.0, i as f64)).collect(),
            sample_rate: 240e9,
            symbol_rate: Some(60e9),
        }
    }

    #[test]
    fn round_trip_exact_for_f32_values() {
        let f = field();
        let back = decode_waveform(&encode_waveform(&f)).unwrap();
        assert_eq!(back.x, f.x);
        assert_eq!(back.y, f.y);
        assert_eq!(back.sample_rate, f.sample_rate);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_waveform(&field());
        assert_eq!(bytes.len(), 24 + 16 * 16);
        assert_eq!(&bytes[..4], b"FFWV");
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 16);
    }

    #[test]
    fn rejects_damaged_dumps() {
        let bytes = encode_waveform(&field());
        assert!(decode_waveform(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_waveform(&bytes[..10]).is_err());
        let mut v = bytes.clone();
        v[4] = 7;
        assert!(matches!(decode_waveform(&v), Err(Error::Version { .. })));
        let mut v = bytes.clone();
        v[16] = 0xff;
        assert!(decode_waveform(&v).is_err());
        let mut v = bytes.clone();
        v[6] = 1;
        assert!(matches!(decode_waveform(&v), Err(Error::Format(_))));
        let mut v = bytes;
        v[24..28].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_waveform(&v), Err(Error::Format(_))));
    }
}
