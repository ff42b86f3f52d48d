//! Transform files: a 4×4 homogeneous matrix, row-major, 16 whitespace
//! separated reals. The bottom row must be exactly `0 0 0 1`.

use std::path::Path;

use nalgebra::Matrix4;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut values = Vec::with_capacity(16);
    for (i, tok) in text.split_whitespace().enumerate() {
        let v: f64 = tok.parse().map_err(|_| {
            Error::parse(path, format!("value {}", i + 1), format!("'{tok}' is not a number"))
        })?;
        values.push(v);
    }
    if values.len() != 16 {
        return Err(Error::parse(
            path,
            format!("value {}", values.len().min(16) + 1),
            format!("expected 16 values, found {}", values.len()),
        ));
    }
    RigidTransform::from_matrix(&Matrix4::from_row_slice(&values))
}

pub fn write_transform(t: &RigidTransform, path: impl AsRef<Path>) -> Result<()> {
    let m = t.to_matrix();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn identity_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n").unwrap();
        assert_eq!(read_transform(&p).unwrap(), RigidTransform::identity());
    }

    #[test]
    fn reflection_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1 0 0 0\n0 1 0 0\n0 0 -1 0\n0 0 0 1\n").unwrap();
        let err = read_transform(&p).unwrap_err();
        assert!(matches!(err, Error::NotRigid(_)));
        assert!(err.to_string().contains("determinant"), "{err}");
    }

    #[test]
    fn bad_bottom_row_and_arity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n").unwrap();
        assert!(read_transform(&p).unwrap_err().to_string().contains("bottom row"));
        fs::write(&p, "1 0 0 0\n0 1 0 0\n0 0 1 0\n").unwrap();
        assert!(matches!(read_transform(&p), Err(Error::Parse { .. })));
    }
}
