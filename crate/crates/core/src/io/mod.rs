//! File formats: point clouds (PLY, XYZ), trajectories, descriptor sets,
//! transforms and run reports.
//!
//! Every reader reports the location of the first problem it finds and
//! never drops rows silently.

mod descriptor;
mod ply;
mod report;
mod trajectory;
mod transform;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use descriptor::{read_descriptor_set, write_descriptor_set, DescriptorFormat, DESCRIPTOR_MAGIC};
pub use ply::{read_point_cloud, read_point_cloud_auto, write_point_cloud, PointCloudFormat};
pub use report::{
    read_report, write_report, write_table_csv, InputIdentity, RegionRecord, Report,
    ReportMetadata,
};
pub use trajectory::{read_trajectory, write_trajectory};
pub use transform::{read_transform, write_transform};

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| {
        Error::parse(
            path,
            format!("byte {}", e.utf8_error().valid_up_to()),
            "file is not valid UTF-8",
        )
    })
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed run never leaves a truncated output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Formats a value with 9 significant digits.
pub(crate) fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Size and SHA-256 of an input file, for the report metadata.
pub fn identify_input(role: &str, path: impl AsRef<Path>) -> Result<InputIdentity> {
    use sha2::{Digest, Sha256};
    use std::fmt::Write as _;
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut sha256 = String::with_capacity(64);
    for b in Sha256::digest(&bytes) {
        let _ = write!(sha256, "{b:02x}");
    }
    Ok(InputIdentity {
        role: role.to_string(),
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256,
    })
}
