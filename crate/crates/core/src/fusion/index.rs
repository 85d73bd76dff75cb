//! Uniform hash grid for fixed-radius neighbour queries.

use std::collections::HashMap;

use crate::geometry::Vec3;

#[derive(Debug, Clone)]
pub struct HashGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    points: Vec<Vec3>,
}

impl HashGrid {
    /// Builds the index with cubic cells of edge `cell`.
    pub fn build(points: impl IntoIterator<Item = Vec3>, cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let points: Vec<Vec3> = points.into_iter().collect();
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell)).or_default().push(i as u32);
        }
        HashGrid { cell, cells, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All points within the closed ball of `radius` around `center`, as
    /// `(distance, index)` sorted by distance then index.
    pub fn within(&self, center: &Vec3, radius: f64) -> Vec<(f64, u32)> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let reach = (radius / self.cell).ceil() as i64;
        let c = cell_of(center, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d = (self.points[i as usize] - center).norm();
                        if d <= radius {
                            out.push((d, i));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }
}

fn cell_of(p: &Vec3, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_index_returns_nothing() {
        let g = HashGrid::build(Vec::new(), 0.4);
        assert!(g.within(&Vec3::zeros(), 1.0).is_empty());
    }

    #[test]
    fn closed_ball_includes_boundary() {
        let g = HashGrid::build([Vec3::new(0.4, 0.0, 0.0), Vec3::new(0.41, 0.0, 0.0)], 0.4);
        let hits = g.within(&Vec3::zeros(), 0.4);
        assert_eq!(hits, vec![(0.4, 0)]);
    }
}
