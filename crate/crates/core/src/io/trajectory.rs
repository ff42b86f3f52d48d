//! Trajectory CSV: header `k,x,y,z`, one pose per row, `k` contiguous from 1.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Trajectory};

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "k,x,y,z" => {}
        Some((n, _)) => {
            return Err(Error::parse(
                path,
                format!("line {n}"),
                "expected header 'k,x,y,z'",
            ))
        }
        None => return Err(Error::parse(path, "line 1", "empty trajectory file")),
    }

    let mut poses = Vec::new();
    for (line_no, line) in lines {
        let at = || format!("line {line_no}");
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                at(),
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let k: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, at(), format!("'{}' is not a step index", fields[0])))?;
        let expected = poses.len() as u64 + 1;
        if k != expected {
            return Err(Error::parse(
                path,
                at(),
                format!("step k = {k} out of order (expected k = {expected})"),
            ));
        }
        let mut xyz = [0.0; 3];
        for i in 0..3 {
            xyz[i] = fields[i + 1].parse().map_err(|_| {
                Error::parse(path, at(), format!("'{}' is not a number", fields[i + 1]))
            })?;
        }
        let p = Point3::try_new(xyz[0], xyz[1], xyz[2])
            .ok_or_else(|| Error::parse(path, at(), "non-finite coordinate"))?;
        poses.push(p);
    }
    Ok(Trajectory::new(poses))
}

/// Writes with shortest round-trip float formatting, so reads are exact.
pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("k,x,y,z\n");
    for (k, p) in traj.indexed() {
        let _ = writeln!(s, "{k},{:?},{:?},{:?}", p.x(), p.y(), p.z());
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn two_row_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "k,x,y,z\n1,0,0,0\n2,1,0,0\n").unwrap();
        let t = read_trajectory(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.pose(2), Some(Point3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn shuffled_rows_name_first_out_of_order_k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "k,x,y,z\n1,0,0,0\n3,2,0,0\n2,1,0,0\n").unwrap();
        let msg = read_trajectory(&p).unwrap_err().to_string();
        assert!(msg.contains("k = 3"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");

        fs::write(&p, "k,x,y,z\n1,0,0,0\n1,0,0,0\n").unwrap();
        assert!(read_trajectory(&p).is_err());
    }

    #[test]
    fn missing_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "1,0,0,0\n").unwrap();
        assert!(read_trajectory(&p).is_err());
    }
}
