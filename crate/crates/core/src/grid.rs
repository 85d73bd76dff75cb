//! Dense voxel grids and the VOXG file format.
//!
//! VOXG layout (little-endian): magic `VOXG`, u32 version = 1, u32 X, Y, Z, C,
//! f32 origin[3], f32 voxel_size, u8 payload kind (0 = f32 channels,
//! 1 = u8 labels), then the payload ordered x-major, then y, then z, then
//! channel. The in-memory layout uses the same ordering.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::classes::{argmax, EMPTY_CLASS, NUM_CLASSES};
use crate::error::{DecodeError, Error, Result};
use crate::geometry::Vec3;

pub const VOXG_MAGIC: [u8; 4] = *b"VOXG";
pub const VOXG_VERSION: u32 = 1;
pub const VOXG_HEADER_LEN: usize = 41;

/// Placement and resolution of a dense grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("grid dims must be > 0: {dims:?}")));
        }
        Ok(GridGeometry {
            origin,
            voxel_size,
            dims,
        })
    }

    /// 100 x 100 x 8 voxels of 0.4 m covering the default ego region.
    pub fn ego_default() -> Self {
        GridGeometry {
            origin: Vec3::new(-20.0, -20.0, 0.0),
            voxel_size: 0.4,
            dims: [100, 100, 8],
        }
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let xy = index / self.dims[2];
        [xy / self.dims[1], xy % self.dims[1], z]
    }

    pub fn center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    pub fn center_of(&self, index: usize) -> Vec3 {
        let [x, y, z] = self.coords(index);
        self.center(x, y, z)
    }

    /// Voxel containing `p`, if inside the grid. Points on an interior
    /// boundary belong to the upper voxel.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.voxel_size).floor();
            if !(f >= 0.0) || f >= self.dims[i] as f64 {
                return None;
            }
            out[i] = f as usize;
        }
        Some(out)
    }

    pub fn extent_max(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                self.dims[0] as f64,
                self.dims[1] as f64,
                self.dims[2] as f64,
            ) * self.voxel_size
    }
}

/// Per-voxel, per-class aggregated evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    pub geometry: GridGeometry,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl ChannelGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        ChannelGrid {
            geometry,
            num_classes: NUM_CLASSES,
            data: vec![0.0; geometry.num_voxels() * NUM_CLASSES],
        }
    }

    pub fn voxel(&self, index: usize) -> &[f64] {
        &self.data[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn voxel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.num_classes..(index + 1) * self.num_classes]
    }

    /// Per-voxel argmax. Voxels whose channels are all below
    /// `min_contribution` are labeled empty.
    pub fn labels(&self, min_contribution: f64) -> LabelGrid {
        let labels = self
            .data
            .chunks_exact(self.num_classes)
            .map(|v| {
                if v.iter().all(|c| *c < min_contribution) {
                    EMPTY_CLASS as u8
                } else {
                    argmax(v) as u8
                }
            })
            .collect();
        LabelGrid {
            geometry: self.geometry,
            labels,
        }
    }
}

/// Per-voxel class labels in `0..NUM_CLASSES`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    pub geometry: GridGeometry,
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn empty(geometry: GridGeometry) -> Self {
        LabelGrid {
            geometry,
            labels: vec![EMPTY_CLASS as u8; geometry.num_voxels()],
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.geometry.index(x, y, z)]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|l| **l as usize != EMPTY_CLASS).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.geometry.num_voxels() {
            return Err(Error::InvalidArgument(format!(
                "label buffer has {} entries for {} voxels",
                self.labels.len(),
                self.geometry.num_voxels()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|l| **l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidLabel {
                label,
                num_classes: NUM_CLASSES,
            });
        }
        Ok(())
    }
}

/// Either payload kind of a VOXG file.
#[derive(Clone, Debug, PartialEq)]
pub enum VoxelGrid {
    Channels(ChannelGrid),
    Labels(LabelGrid),
}

impl VoxelGrid {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            VoxelGrid::Channels(g) => &g.geometry,
            VoxelGrid::Labels(g) => &g.geometry,
        }
    }

    /// Label view; channel grids are decoded with the given floor.
    pub fn to_labels(&self, min_contribution: f64) -> LabelGrid {
        match self {
            VoxelGrid::Channels(g) => g.labels(min_contribution),
            VoxelGrid::Labels(g) => g.clone(),
        }
    }

    pub fn write_voxg<W: Write>(&self, mut w: W) -> Result<()> {
        let geometry = self.geometry();
        let num_classes = match self {
            VoxelGrid::Channels(g) => g.num_classes,
            VoxelGrid::Labels(_) => NUM_CLASSES,
        };
        w.write_all(&VOXG_MAGIC)?;
        w.write_u32::<LittleEndian>(VOXG_VERSION)?;
        for d in geometry.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u32::<LittleEndian>(num_classes as u32)?;
        for i in 0..3 {
            w.write_f32::<LittleEndian>(geometry.origin[i] as f32)?;
        }
        w.write_f32::<LittleEndian>(geometry.voxel_size as f32)?;
        match self {
            VoxelGrid::Channels(g) => {
                w.write_u8(0)?;
                let mut buf = Vec::with_capacity(g.data.len() * 4);
                for v in &g.data {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                w.write_all(&buf)?;
            }
            VoxelGrid::Labels(g) => {
                w.write_u8(1)?;
                w.write_all(&g.labels)?;
            }
        }
        Ok(())
    }

    pub fn to_voxg_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_voxg(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_voxg_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < VOXG_HEADER_LEN {
            return Err(DecodeError::Truncated {
                needed: VOXG_HEADER_LEN,
                available: bytes.len(),
            }
            .into());
        }
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != VOXG_MAGIC {
            return Err(DecodeError::BadMagic {
                expected: VOXG_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VOXG_VERSION {
            return Err(DecodeError::VersionMismatch {
                expected: VOXG_VERSION,
                found: version,
            }
            .into());
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let num_classes = r.read_u32::<LittleEndian>()? as usize;
        let mut origin = Vec3::zeros();
        for i in 0..3 {
            origin[i] = r.read_f32::<LittleEndian>()? as f64;
        }
        let voxel_size = r.read_f32::<LittleEndian>()? as f64;
        let kind = r.read_u8()?;
        let geometry = GridGeometry::new(origin, voxel_size, dims).map_err(|e| {
            DecodeError::InvalidField {
                field: "geometry",
                detail: e.to_string(),
            }
        })?;
        if num_classes == 0 {
            return Err(DecodeError::InvalidField {
                field: "C",
                detail: "channel count must be positive".into(),
            }
            .into());
        }
        let n = geometry.num_voxels();
        let (needed, grid) = match kind {
            0 => {
                let needed = n * num_classes * 4;
                check_len(r.len(), needed)?;
                let data = r[..needed]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect::<Vec<_>>();
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(DecodeError::NonFinite {
                        field: "channels",
                        record: data.iter().position(|v| !v.is_finite()).unwrap(),
                    }
                    .into());
                }
                (
                    needed,
                    VoxelGrid::Channels(ChannelGrid {
                        geometry,
                        num_classes,
                        data,
                    }),
                )
            }
            1 => {
                check_len(r.len(), n)?;
                let grid = LabelGrid {
                    geometry,
                    labels: r[..n].to_vec(),
                };
                if let Some(&l) = grid.labels.iter().find(|l| **l as usize >= num_classes) {
                    return Err(DecodeError::InvalidField {
                        field: "labels",
                        detail: format!("label {l} >= C = {num_classes}"),
                    }
                    .into());
                }
                (n, VoxelGrid::Labels(grid))
            }
            other => {
                return Err(DecodeError::InvalidField {
                    field: "payload_kind",
                    detail: format!("unknown kind {other}"),
                }
                .into())
            }
        };
        if r.len() > needed {
            return Err(DecodeError::TrailingBytes(r.len() - needed).into());
        }
        Ok(grid)
    }
}

fn check_len(available: usize, needed: usize) -> Result<(), DecodeError> {
    if available < needed {
        Err(DecodeError::Truncated { needed, available })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = GridGeometry::new(Vec3::zeros(), 0.5, [3, 4, 5]).unwrap();
        for i in 0..g.num_voxels() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
        assert_eq!(g.index(0, 0, 1), 1);
        assert_eq!(g.index(0, 1, 0), 5);
        assert_eq!(g.index(1, 0, 0), 20);
    }

    #[test]
    fn voxel_of_point() {
        let g = GridGeometry::ego_default();
        assert_eq!(g.voxel_of(&Vec3::new(-20.0, -20.0, 0.0)), Some([0, 0, 0]));
        assert_eq!(g.voxel_of(&Vec3::new(19.99, 19.99, 3.19)), Some([99, 99, 7]));
        assert_eq!(g.voxel_of(&Vec3::new(20.0, 0.0, 1.0)), None);
        assert_eq!(g.voxel_of(&Vec3::new(0.0, 0.0, -0.01)), None);
    }

    #[test]
    fn labels_decode_ties_and_empty_floor() {
        let geom = GridGeometry::new(Vec3::zeros(), 1.0, [3, 1, 1]).unwrap();
        let mut grid = ChannelGrid::zeros(geom);
        grid.voxel_mut(1)[0] = 0.2;
        grid.voxel_mut(1)[1] = 0.9;
        grid.voxel_mut(2)[0] = 0.5;
        grid.voxel_mut(2)[1] = 0.5;
        let labels = grid.labels(1e-4);
        assert_eq!(labels.labels, vec![EMPTY_CLASS as u8, 1, 0]);
    }

    #[test]
    fn header_is_41_bytes() {
        let geom = GridGeometry::new(Vec3::zeros(), 1.0, [1, 1, 1]).unwrap();
        let bytes = VoxelGrid::Labels(LabelGrid::empty(geom)).to_voxg_bytes();
        assert_eq!(bytes.len(), VOXG_HEADER_LEN + 1);
    }

    #[test]
    fn decode_errors() {
        let geom = GridGeometry::new(Vec3::zeros(), 1.0, [2, 2, 2]).unwrap();
        let bytes = VoxelGrid::Labels(LabelGrid::empty(geom)).to_voxg_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            VoxelGrid::from_voxg_bytes(&bad),
            Err(Error::Decode(DecodeError::BadMagic { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            VoxelGrid::from_voxg_bytes(&bad),
            Err(Error::Decode(DecodeError::VersionMismatch { .. }))
        ));
        assert!(matches!(
            VoxelGrid::from_voxg_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Decode(DecodeError::Truncated { .. }))
        ));
    }
}
