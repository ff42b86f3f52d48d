//! Run report: per-region timing, volume and point-count records plus the
//! parameters and input files that produced them.
//!
//! JSON layout (keys in this order):
//!
//! ```text
//! {
//!   "metadata": { "tool", "version", "parameters": {...}, "inputs": [...],
//!                 "t_merge", "t_describe", "t_cd" },
//!   "regions": [ { "rank", "k_t1", "k_t", "distance", "center",
//!                  "t_merge", "t_cd", "t_oe", "t_total",
//!                  "v_sphere", "v_oe", "s_points", "oe_points",
//!                  "oe_points_pre_sor", "s_points_ref", "removed_points",
//!                  "removed_points_pre_sor", "v_removed" }, ... ]
//! }
//! ```
//!
//! Times are seconds, volumes cubic meters. `s_points` counts the changed
//! session's sphere, `oe_points` the points extracted from it after outlier
//! removal; the `removed_*` fields describe the opposite direction.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputIdentity {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub version: String,
    /// Every pipeline parameter used for the run.
    pub parameters: serde_json::Value,
    pub inputs: Vec<InputIdentity>,
    pub t_merge: f64,
    pub t_describe: f64,
    pub t_cd: f64,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: serde_json::Value::Object(Default::default()),
            inputs: Vec::new(),
            t_merge: 0.0,
            t_describe: 0.0,
            t_cd: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionRecord {
    pub rank: usize,
    /// Step of the region center in the changed session.
    pub k_t1: u32,
    /// Step of the paired pose in the reference session.
    pub k_t: u32,
    /// Descriptor-space change score.
    pub distance: f64,
    pub center: [f64; 3],
    pub t_merge: f64,
    pub t_cd: f64,
    pub t_oe: f64,
    pub t_total: f64,
    pub v_sphere: f64,
    pub v_oe: f64,
    pub s_points: u64,
    pub oe_points: u64,
    pub oe_points_pre_sor: u64,
    pub s_points_ref: u64,
    pub removed_points: u64,
    pub removed_points_pre_sor: u64,
    pub v_removed: f64,
}

impl RegionRecord {
    pub fn validate(&self) -> Result<()> {
        let times = [self.t_merge, self.t_cd, self.t_oe, self.t_total];
        let volumes = [self.v_sphere, self.v_oe, self.v_removed];
        if times
            .iter()
            .chain(volumes.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidReport(format!(
                "region {}: times and volumes must be finite and non-negative",
                self.rank
            )));
        }
        if self.t_total < self.t_cd || self.t_total < self.t_oe {
            return Err(Error::InvalidReport(format!(
                "region {}: t_total {} is below t_cd {} or t_oe {}",
                self.rank, self.t_total, self.t_cd, self.t_oe
            )));
        }
        if self.oe_points > self.s_points {
            return Err(Error::InvalidReport(format!(
                "region {}: oe_points {} exceeds s_points {}",
                self.rank, self.oe_points, self.s_points
            )));
        }
        if self.oe_points > self.oe_points_pre_sor
            || self.removed_points > self.removed_points_pre_sor
            || self.removed_points_pre_sor > self.s_points_ref
        {
            return Err(Error::InvalidReport(format!(
                "region {}: inconsistent point counts",
                self.rank
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub regions: Vec<RegionRecord>,
}

impl Report {
    pub fn validate(&self) -> Result<()> {
        self.regions.iter().try_for_each(RegionRecord::validate)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidReport(e.to_string()))
    }
}

/// Validates the report, then writes it as pretty-printed JSON.
pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    write_atomic(path.as_ref(), json.as_bytes())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            path,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// One row per region, columns in the order of the timing and volume tables:
/// `region,t_merge,t_cd,t_oe,t_total,v_sphere,v_oe,s_points,oe_points`.
pub fn write_table_csv(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    report.validate()?;
    let mut s = String::from("region,t_merge,t_cd,t_oe,t_total,v_sphere,v_oe,s_points,oe_points\n");
    for r in &report.regions {
        let _ = writeln!(
            s,
            "{},{:.4},{:.4},{:.4},{:.4},{:.2},{:.2},{},{}",
            r.rank, r.t_merge, r.t_cd, r.t_oe, r.t_total, r.v_sphere, r.v_oe, r.s_points, r.oe_points
        );
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_row() -> RegionRecord {
        RegionRecord {
            rank: 1,
            k_t1: 17,
            k_t: 17,
            distance: 0.4,
            center: [1.0, 2.0, 3.0],
            t_merge: 0.051,
            t_cd: 0.0162,
            t_oe: 0.0005,
            t_total: 0.0677,
            v_sphere: 206.0,
            v_oe: 0.30,
            s_points: 2470,
            oe_points: 47,
            oe_points_pre_sor: 50,
            s_points_ref: 2400,
            removed_points: 0,
            removed_points_pre_sor: 0,
            v_removed: 0.0,
        }
    }

    #[test]
    fn empty_report_has_empty_regions_array() {
        let json = Report::default().to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["regions"], serde_json::json!([]));
    }

    #[test]
    fn table_values_serialize_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let report = Report {
            metadata: ReportMetadata::default(),
            regions: vec![table_row()],
        };
        write_report(&report, &p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let r = &v["regions"][0];
        assert_eq!(r["v_sphere"].as_f64(), Some(206.0));
        assert_eq!(r["v_oe"].as_f64(), Some(0.30));
        assert_eq!(r["s_points"].as_u64(), Some(2470));
        assert_eq!(r["oe_points"].as_u64(), Some(47));
        assert_eq!(read_report(&p).unwrap(), report);
    }

    #[test]
    fn key_order_is_stable() {
        let json = Report {
            metadata: ReportMetadata::default(),
            regions: vec![table_row()],
        }
        .to_json()
        .unwrap();
        let order = ["\"t_merge\"", "\"t_cd\"", "\"t_oe\"", "\"t_total\"", "\"v_sphere\"", "\"v_oe\"", "\"s_points\"", "\"oe_points\""];
        let region_part = &json[json.find("\"regions\"").unwrap()..];
        let pos: Vec<usize> = order.iter().map(|k| region_part.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invariant_violations_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let mut bad = table_row();
        bad.oe_points = 3000;
        let report = Report {
            metadata: ReportMetadata::default(),
            regions: vec![bad],
        };
        assert!(matches!(write_report(&report, &p), Err(Error::InvalidReport(_))));
        assert!(!p.exists());

        let mut bad = table_row();
        bad.t_total = 0.001;
        assert!(bad.validate().is_err());
    }
}
