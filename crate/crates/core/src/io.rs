//! Binary snapshots and CSV export.
//!
//! Snapshot layout (all little-endian):
//!
//! ```text
//! 0..4    magic "SLAB"
//! 4       backend kind (0 torus, 1 sphere, 2 operator matrix)
//! 5       number of dimensions (1..=6)
//! 6       value kind (0 real, 1 complex as interleaved re/im)
//! 7       reserved, zero
//! 8..32   dims as u32, unused slots zero
//! 32..    f64 samples, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::field::{BackendKind, BackendTag, ScalarField};

pub const MAGIC: &[u8; 4] = b"SLAB";
pub const HEADER_LEN: usize = 32;
const MAX_DIMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SnapshotKind {
    Torus = 0,
    Sphere = 1,
    Matrix = 2,
}

impl SnapshotKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SnapshotKind::Torus),
            1 => Ok(SnapshotKind::Sphere),
            2 => Ok(SnapshotKind::Matrix),
            other => Err(LabError::Format(format!("unknown backend byte {other}"))),
        }
    }
}

impl From<BackendKind> for SnapshotKind {
    fn from(k: BackendKind) -> Self {
        match k {
            BackendKind::Torus => SnapshotKind::Torus,
            BackendKind::Sphere => SnapshotKind::Sphere,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub dims: Vec<usize>,
    pub complex: bool,
    /// Row-major samples; imaginary parts are zero when `complex` is false.
    pub values: Vec<Complex64>,
}

impl Snapshot {
    pub fn from_field(u: &ScalarField) -> Self {
        let tag = u.tag();
        let dims = match tag.kind {
            // y is the slow index.
            BackendKind::Torus => vec![tag.resolution, tag.resolution],
            BackendKind::Sphere => vec![tag.resolution],
        };
        Snapshot {
            kind: tag.kind.into(),
            dims,
            complex: !u.is_real(),
            values: u.values().to_vec(),
        }
    }

    /// Rebuilds a field; fails for matrix snapshots.
    pub fn to_field(&self) -> Result<ScalarField> {
        let (kind, resolution) = match (self.kind, self.dims.as_slice()) {
            (SnapshotKind::Torus, [a, b]) if a == b => (BackendKind::Torus, *a),
            (SnapshotKind::Sphere, [a]) => (BackendKind::Sphere, *a),
            _ => {
                return Err(LabError::Format(format!(
                    "{:?} snapshot with dims {:?} is not a field",
                    self.kind, self.dims
                )))
            }
        };
        let tag = BackendTag { kind, resolution };
        Ok(if self.complex {
            ScalarField::from_complex(tag, self.values.clone())
        } else {
            ScalarField::from_real(tag, self.values.iter().map(|z| z.re).collect())
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dims.is_empty() || self.dims.len() > MAX_DIMS {
            return Err(LabError::Format(format!("{} dims not supported", self.dims.len())));
        }
        let count: usize = self.dims.iter().product();
        if count != self.values.len() {
            return Err(LabError::Format(format!(
                "dims {:?} do not match {} values",
                self.dims,
                self.values.len()
            )));
        }
        let per = if self.complex { 2 } else { 1 };
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * per * count);
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        out.push(self.dims.len() as u8);
        out.push(u8::from(self.complex));
        out.push(0);
        for i in 0..MAX_DIMS {
            let d = self.dims.get(i).copied().unwrap_or(0);
            let d = u32::try_from(d).map_err(|_| LabError::Format(format!("dim {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for z in &self.values {
            out.extend_from_slice(&z.re.to_le_bytes());
            if self.complex {
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(LabError::Format("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(LabError::Format("bad magic".into()));
        }
        let kind = SnapshotKind::from_byte(bytes[4])?;
        let ndims = bytes[5] as usize;
        if ndims == 0 || ndims > MAX_DIMS {
            return Err(LabError::Format(format!("{ndims} dims not supported")));
        }
        let complex = match bytes[6] {
            0 => false,
            1 => true,
            b => return Err(LabError::Format(format!("unknown value kind {b}"))),
        };
        let dims: Vec<usize> = (0..ndims)
            .map(|i| {
                let at = 8 + 4 * i;
                u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
            })
            .collect();
        let count: usize = dims.iter().product();
        let per = if complex { 2 } else { 1 };
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * per * count {
            return Err(LabError::Format(format!(
                "body has {} bytes, expected {}",
                body.len(),
                8 * per * count
            )));
        }
        let floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values = if complex {
            floats.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
        } else {
            floats.into_iter().map(|v| Complex64::new(v, 0.0)).collect()
        };
        Ok(Snapshot {
            kind,
            dims,
            complex,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_field(u: &ScalarField, path: &Path) -> Result<()> {
    Snapshot::from_field(u).write(path)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    Snapshot::read(path)?.to_field()
}

/// CSV with one row per sample: index columns then value (`re,im` when
/// complex). Torus indices are `i,j` with `i` along x.
pub fn write_field_csv(u: &ScalarField, path: &Path, comments: &[String]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let tag = u.tag();
    let complex = !u.is_real();
    let value_cols = if complex { "re,im" } else { "value" };
    match tag.kind {
        BackendKind::Torus => writeln!(w, "i,j,{value_cols}")?,
        BackendKind::Sphere => writeln!(w, "k,{value_cols}")?,
    }
    for (idx, z) in u.values().iter().enumerate() {
        match tag.kind {
            BackendKind::Torus => {
                write!(w, "{},{},", idx % tag.resolution, idx / tag.resolution)?
            }
            BackendKind::Sphere => write!(w, "{idx},")?,
        }
        if complex {
            writeln!(w, "{:e},{:e}", z.re, z.im)?;
        } else {
            writeln!(w, "{:e}", z.re)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic table writer used for traces and curves.
pub fn write_table_csv(
    path: &Path,
    comments: &[String],
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(LabError::InvalidArgument(format!(
                "row has {} entries for {} columns",
                row.len(),
                columns.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
