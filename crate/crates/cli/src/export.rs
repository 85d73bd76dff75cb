//! The `export` subcommand: text dumps of VOXG grids.
//!
//! The voxel listing starts with a `# geometry` comment followed by one row
//! per non-empty voxel, so it is lossless for label grids and can be read
//! back with [`parse_voxels_csv`]. Channel grids list all channels of every
//! voxel with a non-zero channel.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use gscoop::classes::{class_name, EMPTY_CLASS, NUM_CLASSES};
use gscoop::{GridGeometry, LabelGrid, Vec3, VoxelGrid};

fn geometry_line(g: &GridGeometry) -> String {
    format!(
        "# dims={},{},{} origin={},{},{} voxel_size={}\n",
        g.dims[0], g.dims[1], g.dims[2], g.origin.x, g.origin.y, g.origin.z, g.voxel_size
    )
}

pub fn voxels_csv(grid: &VoxelGrid) -> String {
    let g = grid.geometry();
    let mut s = geometry_line(g);
    match grid {
        VoxelGrid::Labels(l) => {
            s.push_str("x,y,z,label,class\n");
            for (i, &lab) in l.labels.iter().enumerate() {
                if lab as usize == EMPTY_CLASS {
                    continue;
                }
                let [x, y, z] = g.coords(i);
                writeln!(s, "{x},{y},{z},{lab},{}", class_name(lab as usize)).unwrap();
            }
        }
        VoxelGrid::Channels(c) => {
            let header: Vec<String> = (0..c.num_classes).map(|k| format!("c{k}")).collect();
            writeln!(s, "x,y,z,{}", header.join(",")).unwrap();
            for i in 0..g.num_voxels() {
                let v = c.voxel(i);
                if v.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let [x, y, z] = g.coords(i);
                let vals: Vec<String> = v.iter().map(|x| format!("{}", *x as f32)).collect();
                writeln!(s, "{x},{y},{z},{}", vals.join(",")).unwrap();
            }
        }
    }
    s
}

/// Per-class voxel counts of the label view.
pub fn counts_csv(grid: &VoxelGrid, min_contribution: f64) -> String {
    let labels = grid.to_labels(min_contribution);
    let mut s = String::from("label,class,count\n");
    for (k, n) in labels.class_counts().iter().enumerate() {
        writeln!(s, "{k},{},{n}", class_name(k)).unwrap();
    }
    s
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3]>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("expected three comma-separated values, got {s:?}");
    }
    Ok([parts[0].parse()?, parts[1].parse()?, parts[2].parse()?])
}

/// Reads a label listing written by [`voxels_csv`].
pub fn parse_voxels_csv(text: &str) -> Result<LabelGrid> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().context("empty export")?;
    let meta = first.strip_prefix("# ").context("missing geometry line")?;
    let (mut dims, mut origin, mut voxel_size) = (None, None, None);
    for field in meta.split_whitespace() {
        let (k, v) = field.split_once('=').with_context(|| format!("bad geometry field {field:?}"))?;
        match k {
            "dims" => dims = Some(parse_triple::<usize>(v)?),
            "origin" => origin = Some(parse_triple::<f64>(v)?),
            "voxel_size" => voxel_size = Some(v.parse::<f64>()?),
            _ => bail!("unknown geometry field {k:?}"),
        }
    }
    let (Some(dims), Some(origin), Some(voxel_size)) = (dims, origin, voxel_size) else {
        bail!("incomplete geometry line");
    };
    let geometry = GridGeometry::new(Vec3::from(origin), voxel_size, dims)?;
    let mut grid = LabelGrid::empty(geometry);
    match lines.next() {
        Some((_, "x,y,z,label,class")) => {}
        _ => bail!("not a label listing"),
    }
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("line {}: expected 5 fields", n + 1);
        }
        let [x, y, z] = [f[0], f[1], f[2]].map(|v| v.parse::<usize>());
        let (x, y, z) = (x?, y?, z?);
        let label: u8 = f[3].parse()?;
        if x >= dims[0] || y >= dims[1] || z >= dims[2] || label as usize >= NUM_CLASSES {
            bail!("line {}: voxel or label out of range", n + 1);
        }
        grid.labels[geometry.index(x, y, z)] = label;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> GridGeometry {
        GridGeometry::new(Vec3::new(-1.0, -1.0, 0.0), 0.5, [4, 4, 2]).unwrap()
    }

    #[test]
    fn empty_grid_counts() {
        let g = VoxelGrid::Labels(LabelGrid::empty(geometry()));
        let csv = counts_csv(&g, 1e-4);
        assert!(csv.ends_with("12,empty,32\n"));
        assert!(csv.lines().skip(1).take(12).all(|l| l.ends_with(",0")));
    }

    #[test]
    fn listing_round_trip() {
        let mut l = LabelGrid::empty(geometry());
        l.labels[3] = 7;
        l.labels[20] = 0;
        let back = parse_voxels_csv(&voxels_csv(&VoxelGrid::Labels(l.clone()))).unwrap();
        assert_eq!(back.labels, l.labels);
        assert_eq!(back.class_counts(), l.class_counts());
    }
}
