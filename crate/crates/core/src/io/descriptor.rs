//! Descriptor set files.
//!
//! CSV: optional header `k,q1,...,q64`, then one row `k,q1,...,q64` per
//! record. Values are written in shortest round-trip form.
//!
//! Binary: magic `CDQ1`, `u32` record count, then per record a `u32` step
//! followed by 64 `f32` values, all little-endian. Values are narrowed to
//! `f32` on write, so the round trip is bit-exact for `f32`-representable
//! vectors.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::descriptor::{DescriptorRecord, DescriptorSet, DESCRIPTOR_DIM};
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"CDQ1";

const RECORD_BYTES: usize = 4 + 4 * DESCRIPTOR_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptorFormat {
    Csv,
    Binary,
}

impl DescriptorFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DescriptorFormat::Csv,
            _ => DescriptorFormat::Binary,
        }
    }
}

/// Reads either format; binary files are recognized by their magic.
pub fn read_descriptor_set(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(DESCRIPTOR_MAGIC) {
        read_binary(path, &bytes)
    } else if bytes.len() >= 4 && !bytes[..4].iter().all(|b| b.is_ascii()) {
        Err(Error::parse(path, "byte 0", "wrong magic (expected CDQ1)"))
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::parse(path, "byte 0", "wrong magic: neither CDQ1 binary nor UTF-8 CSV"))?;
        read_csv(path, text)
    }
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<DescriptorSet> {
    if bytes.len() < 8 {
        return Err(Error::parse(path, "byte 4", "missing record count"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + count * RECORD_BYTES;
    if bytes.len() != expected {
        let complete = (bytes.len().saturating_sub(8)) / RECORD_BYTES;
        return Err(Error::parse(
            path,
            format!("byte {}", (8 + complete * RECORD_BYTES).min(bytes.len())),
            format!(
                "header declares {count} records ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let base = 8 + i * RECORD_BYTES;
        let k = u32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let mut q = [0.0; DESCRIPTOR_DIM];
        for (d, slot) in q.iter_mut().enumerate() {
            let off = base + 4 + 4 * d;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::parse(path, format!("byte {off}"), "non-finite value"));
            }
            *slot = v as f64;
        }
        records.push(DescriptorRecord { k, q });
    }
    Ok(DescriptorSet::new(records))
}

fn read_csv(path: &Path, text: &str) -> Result<DescriptorSet> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("line {}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if records.is_empty() && fields.first() == Some(&"k") {
            continue;
        }
        if fields.len() != DESCRIPTOR_DIM + 1 {
            return Err(Error::parse(
                path,
                at(),
                format!(
                    "arity: expected {} values after k, found {}",
                    DESCRIPTOR_DIM,
                    fields.len().saturating_sub(1)
                ),
            ));
        }
        let k: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, at(), format!("'{}' is not a step index", fields[0])))?;
        let mut q = [0.0; DESCRIPTOR_DIM];
        for (slot, field) in q.iter_mut().zip(&fields[1..]) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, at(), format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, at(), "non-finite value"));
            }
            *slot = v;
        }
        records.push(DescriptorRecord { k, q });
    }
    Ok(DescriptorSet::new(records))
}

pub fn write_descriptor_set(
    set: &DescriptorSet,
    path: impl AsRef<Path>,
    format: DescriptorFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        DescriptorFormat::Csv => {
            let mut s = String::from("k");
            for d in 1..=DESCRIPTOR_DIM {
                let _ = write!(s, ",q{d}");
            }
            s.push('\n');
            for r in &set.records {
                let _ = write!(s, "{}", r.k);
                for v in r.q {
                    let _ = write!(s, ",{v:?}");
                }
                s.push('\n');
            }
            s.into_bytes()
        }
        DescriptorFormat::Binary => {
            let count = u32::try_from(set.records.len())
                .map_err(|_| Error::InvalidConfig("too many descriptor records".into()))?;
            let mut out = Vec::with_capacity(8 + set.records.len() * RECORD_BYTES);
            out.extend_from_slice(DESCRIPTOR_MAGIC);
            out.extend_from_slice(&count.to_le_bytes());
            for r in &set.records {
                out.extend_from_slice(&r.k.to_le_bytes());
                for v in r.q {
                    let narrow = v as f32;
                    if !narrow.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "descriptor value {v} does not fit in f32"
                        )));
                    }
                    out.extend_from_slice(&narrow.to_le_bytes());
                }
            }
            out
        }
    };
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn unit_record() -> DescriptorRecord {
        let mut q = [0.0; DESCRIPTOR_DIM];
        q[0] = 1.0;
        DescriptorRecord { k: 1, q }
    }

    #[test]
    fn single_record_round_trips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let set = DescriptorSet::new(vec![unit_record()]);
        for (name, fmt) in [("q.bin", DescriptorFormat::Binary), ("q.csv", DescriptorFormat::Csv)] {
            let p = dir.path().join(name);
            write_descriptor_set(&set, &p, fmt).unwrap();
            assert_eq!(read_descriptor_set(&p).unwrap(), set);
            assert_eq!(DescriptorFormat::from_path(&p), fmt);
        }
    }

    #[test]
    fn short_row_is_arity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        let row: Vec<String> = std::iter::once("1".to_string())
            .chain((0..63).map(|_| "0.5".to_string()))
            .collect();
        fs::write(&p, row.join(",") + "\n").unwrap();
        let msg = read_descriptor_set(&p).unwrap_err().to_string();
        assert!(msg.contains("arity"), "{msg}");
        assert!(msg.contains("found 63"), "{msg}");
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.bin");
        let set = DescriptorSet::new(vec![unit_record(), unit_record()]);
        write_descriptor_set(&set, &p, DescriptorFormat::Binary).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] = 0xFF;
        fs::write(&p, &bytes).unwrap();
        assert!(read_descriptor_set(&p).unwrap_err().to_string().contains("magic"));
        bytes[3] = b'1';
        bytes.truncate(bytes.len() - 1);
        fs::write(&p, &bytes).unwrap();
        assert!(read_descriptor_set(&p).unwrap_err().to_string().contains("declares 2"));
    }
}
