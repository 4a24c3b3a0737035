//! Binary volume files used by the CLI to pass data between subcommands.
//!
//! Layout, little-endian: `"DSCV"`, version `u8`, dtype `u8` (0 = f32 CT,
//! 1 = u8 labels, 2 = bit-packed edges), class count `u16` (0 unless labels),
//! dims `u32 × 3` as depth, height, width, then the payload in row-major order.

use std::path::Path;

use crate::bits;
use crate::error::{Error, Result};
use crate::volume::{CtVolume, Dims, EdgeVolume, Grid, LabelVolume, ValueDomain};
use crate::wire::{check_padding, Reader};

pub const VOLUME_MAGIC: [u8; 4] = *b"DSCV";
pub const VOLUME_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Ct(CtVolume),
    Labels(LabelVolume),
    Edges(EdgeVolume),
}

impl VolumeData {
    pub fn dims(&self) -> Dims {
        match self {
            VolumeData::Ct(v) => v.dims(),
            VolumeData::Labels(v) => v.dims(),
            VolumeData::Edges(v) => v.dims(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VolumeData::Ct(_) => "ct",
            VolumeData::Labels(_) => "labels",
            VolumeData::Edges(_) => "edges",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dims = self.dims();
        let (dtype, classes) = match self {
            VolumeData::Ct(_) => (0u8, 0u16),
            VolumeData::Labels(v) => (1, v.num_classes()),
            VolumeData::Edges(_) => (2, 0),
        };
        let mut out = Vec::with_capacity(20 + 4 * dims.len());
        out.extend_from_slice(&VOLUME_MAGIC);
        out.push(VOLUME_VERSION);
        out.push(dtype);
        out.extend_from_slice(&classes.to_le_bytes());
        for d in dims.as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self {
            VolumeData::Ct(v) => {
                for x in v.voxels() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            VolumeData::Labels(v) => out.extend_from_slice(v.labels()),
            VolumeData::Edges(v) => out.extend(bits::pack_bools(v.mask())),
        }
        out
    }

    /// Parse a volume file. CT data is tagged normalized when every voxel lies
    /// in `[0, 1]` and as Hounsfield units otherwise.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(VOLUME_MAGIC)?;
        let version = r.u8()?;
        if version != VOLUME_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = r.u8()?;
        let classes = r.u16()?;
        let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = dims
            .depth
            .checked_mul(dims.height)
            .and_then(|x| x.checked_mul(dims.width))
            .ok_or_else(|| Error::malformed("volume dims overflow"))?;
        if dtype != 1 && classes != 0 {
            return Err(Error::malformed("class count set on a non-label volume"));
        }
        let out = match dtype {
            0 => {
                let raw = r.take(
                    n.checked_mul(4)
                        .ok_or_else(|| Error::malformed("volume too large"))?,
                )?;
                let vals = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect::<Vec<_>>();
                let domain = if vals.iter().all(|v| (0.0..=1.0).contains(v)) {
                    ValueDomain::Normalized
                } else {
                    ValueDomain::RawHu
                };
                VolumeData::Ct(
                    CtVolume::new(Grid::from_vec(dims, vals)?, domain).map_err(to_format)?,
                )
            }
            1 => {
                let labels = r.take(n)?.to_vec();
                VolumeData::Labels(
                    LabelVolume::new(Grid::from_vec(dims, labels)?, classes).map_err(to_format)?,
                )
            }
            2 => {
                let payload = r.take(bits::packed_len(n))?;
                check_padding(payload, n)?;
                let mask = bits::unpack_bools(payload, n).expect("length checked");
                VolumeData::Edges(EdgeVolume::new(Grid::from_vec(dims, mask)?))
            }
            other => return Err(Error::malformed(format!("unknown volume dtype {other}"))),
        };
        r.finish()?;
        Ok(out)
    }
}

/// A file whose header parses but whose contents break a volume invariant is
/// a format problem, not a caller contract violation.
fn to_format(e: Error) -> Error {
    Error::malformed(e.to_string())
}

pub fn write_volume(path: &Path, vol: &VolumeData) -> Result<()> {
    std::fs::write(path, vol.encode())?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeData> {
    VolumeData::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims::new(2, 3, 5)
    }

    #[test]
    fn round_trips() {
        let d = dims();
        let ct = CtVolume::new(
            Grid::from_fn(d, |a, b, c| (a + b + c) as f32 / 10.0),
            ValueDomain::Normalized,
        )
        .unwrap();
        let hu = CtVolume::new(
            Grid::from_fn(d, |a, _, _| a as f32 * 500.0 - 1000.0),
            ValueDomain::RawHu,
        )
        .unwrap();
        let labels =
            LabelVolume::new(Grid::from_fn(d, |a, b, c| ((a + b * c) % 3) as u8), 3).unwrap();
        let edges = EdgeVolume::new(Grid::from_fn(d, |a, b, c| (a + b + c) % 2 == 0));
        for v in [
            VolumeData::Ct(ct),
            VolumeData::Ct(hu),
            VolumeData::Labels(labels),
            VolumeData::Edges(edges),
        ] {
            assert_eq!(VolumeData::decode(&v.encode()).unwrap(), v);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.vol");
        let v = VolumeData::Edges(EdgeVolume::zeros(dims()));
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn rejects_corruption() {
        let v = VolumeData::Labels(LabelVolume::new(Grid::filled(dims(), 1), 2).unwrap());
        let good = v.encode();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            VolumeData::decode(&bad),
            Err(Error::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            VolumeData::decode(&bad),
            Err(Error::UnsupportedVersion(9))
        ));

        let mut bad = good.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(matches!(VolumeData::decode(&bad), Err(Error::Malformed(_))));

        assert!(matches!(
            VolumeData::decode(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(VolumeData::decode(&bad), Err(Error::Malformed(_))));

        let edges = VolumeData::Edges(EdgeVolume::zeros(dims())).encode();
        let mut bad = edges.clone();
        *bad.last_mut().unwrap() = 0x80;
        assert!(matches!(VolumeData::decode(&bad), Err(Error::Malformed(_))));
    }
}
