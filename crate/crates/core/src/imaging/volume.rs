use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use crate::error::{Error, Result};

pub const HU_MIN: i16 = -1024;
pub const HU_MAX: i16 = 3071;

const MAGIC: &[u8; 4] = b"CACV";
const VERSION: u32 = 1;

/// Physical voxel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Spacing {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = Spacing { x, y, z };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("spacing {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// In-plane pixel area in mm².
    pub fn pixel_area(&self) -> f64 {
        self.x * self.y
    }

    pub fn voxel_volume(&self) -> f64 {
        self.x * self.y * self.z
    }
}

/// A CT volume in Hounsfield units, stored slice-major as `(slice, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    id: String,
    voxels: Array3<i16>,
    spacing: Spacing,
}

impl CtVolume {
    /// Minimum slice count; the scoring patch spans five slices.
    pub const MIN_SLICES: usize = 5;

    pub fn new(id: impl Into<String>, voxels: Array3<i16>, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        let (nz, ny, nx) = voxels.dim();
        if nz < Self::MIN_SLICES {
            return Err(Error::Argument(format!(
                "volume needs at least {} slices, got {nz}",
                Self::MIN_SLICES
            )));
        }
        if ny == 0 || nx == 0 {
            return Err(Error::Argument(format!("empty in-plane grid {ny}x{nx}")));
        }
        if let Some(bad) = voxels.iter().find(|&&v| !(HU_MIN..=HU_MAX).contains(&v)) {
            return Err(Error::Argument(format!(
                "HU value {bad} outside [{HU_MIN}, {HU_MAX}]"
            )));
        }
        Ok(CtVolume { id: id.into(), voxels, spacing })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &Array3<i16> {
        &self.voxels
    }

    pub fn slices(&self) -> usize {
        self.voxels.dim().0
    }

    pub fn rows(&self) -> usize {
        self.voxels.dim().1
    }

    pub fn cols(&self) -> usize {
        self.voxels.dim().2
    }

    /// HU at `(row, col, slice)`.
    pub fn at(&self, row: usize, col: usize, slice: usize) -> i16 {
        self.voxels[[slice, row, col]]
    }

    /// Writes the raw little-endian `CACV` format.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.encode(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let (nz, ny, nx) = self.voxels.dim();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        for d in [nx, ny, nz] {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for s in [self.spacing.x, self.spacing.y, self.spacing.z] {
            w.write_f64::<LittleEndian>(s)?;
        }
        // standard layout iterates slice, row, col
        for &v in self.voxels.iter() {
            w.write_i16::<LittleEndian>(v)?;
        }
        Ok(())
    }

    /// Reads a `CACV` file; `id` names the subject the volume belongs to.
    pub fn read_from(path: &Path, id: impl Into<String>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::format(path, format!("header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::format(path, "bad magic, expected CACV"));
        }
        let header = |r: &mut BufReader<File>| -> std::io::Result<(u32, [u32; 3], [f64; 3])> {
            let version = r.read_u32::<LittleEndian>()?;
            let dims = [
                r.read_u32::<LittleEndian>()?,
                r.read_u32::<LittleEndian>()?,
                r.read_u32::<LittleEndian>()?,
            ];
            let spacing = [
                r.read_f64::<LittleEndian>()?,
                r.read_f64::<LittleEndian>()?,
                r.read_f64::<LittleEndian>()?,
            ];
            Ok((version, dims, spacing))
        };
        let (version, [nx, ny, nz], [sx, sy, sz]) =
            header(&mut r).map_err(|e| Error::format(path, format!("header: {e}")))?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
        let count = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::format(path, "dimension overflow"))?;
        let mut data = vec![0i16; count];
        r.read_i16_into::<LittleEndian>(&mut data)
            .map_err(|e| Error::format(path, format!("voxel data: {e}")))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(path, "trailing bytes after voxel data"));
        }
        let voxels = Array3::from_shape_vec((nz, ny, nx), data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let spacing = Spacing { x: sx, y: sy, z: sz };
        CtVolume::new(id, voxels, spacing).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spacing() -> Spacing {
        Spacing::new(0.7, 0.7, 3.0).unwrap()
    }

    #[test]
    fn rejects_invalid_volumes() {
        let too_thin = Array3::<i16>::zeros((4, 8, 8));
        assert!(CtVolume::new("a", too_thin, spacing()).is_err());
        let mut hot = Array3::<i16>::zeros((5, 8, 8));
        hot[[0, 0, 0]] = 3072;
        assert!(CtVolume::new("a", hot, spacing()).is_err());
        assert!(Spacing::new(0.0, 1.0, 1.0).is_err());
        assert!(Spacing::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn file_round_trip_and_header_layout() {
        let mut v = Array3::<i16>::zeros((5, 3, 4));
        for (i, x) in v.iter_mut().enumerate() {
            *x = i as i16 - 30;
        }
        let vol = CtVolume::new("s1", v, spacing()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.cacv");
        vol.write_to(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CACV");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4); // nx
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3); // ny
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5); // nz
        assert_eq!(bytes.len(), 20 + 24 + 2 * 60);
        // first voxel is slice 0, row 0, col 0; second is col 1
        assert_eq!(i16::from_le_bytes(bytes[44..46].try_into().unwrap()), -30);
        assert_eq!(i16::from_le_bytes(bytes[46..48].try_into().unwrap()), -29);

        let back = CtVolume::read_from(&path, "s1").unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let vol = CtVolume::new("s", Array3::<i16>::zeros((5, 2, 2)), spacing()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.cacv");
        vol.write_to(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(CtVolume::read_from(&path, "s"), Err(Error::Format { .. })));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(CtVolume::read_from(&path, "s"), Err(Error::Format { .. })));
    }
}
