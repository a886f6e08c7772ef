//! Marching Cubes over the cell-centered raster.

use std::collections::HashMap;

use super::source::SdfSource;
use super::tables::{EDGE_TABLE, TRI_TABLE};
use crate::critic::VoxelGrid;
use crate::generator::raster_points;
use crate::mesh::TriangleMesh;

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pair of each edge.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Zero level set of `source` sampled on an `r^3` raster.
pub fn marching_cubes(source: &dyn SdfSource, r: usize) -> TriangleMesh {
    assert!(r >= 2, "marching cubes needs at least 2 samples per axis");
    let values = source.eval_batch(&raster_points(r));
    extract(&values, r)
}

/// Zero level set of a raster.
pub fn marching_cubes_grid(grid: &VoxelGrid) -> TriangleMesh {
    extract(grid.values(), grid.resolution())
}

fn extract(values: &[f64], r: usize) -> TriangleMesh {
    let coord = |i: usize| -1.0 + (2 * i + 1) as f64 / r as f64;
    let idx = |i: usize, j: usize, k: usize| (k * r + j) * r + i;
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles = Vec::new();
    // grid edge (start node, axis) -> vertex
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let node = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                let val: [f64; 8] = std::array::from_fn(|c| {
                    let n = node(c);
                    values[idx(n[0], n[1], n[2])]
                });
                let mut case = 0usize;
                for (c, v) in val.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << c;
                    }
                }
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                let mut local = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let (na, nb) = (node(a), node(b));
                    let axis = (0..3).find(|&d| na[d] != nb[d]).expect("edge spans one axis");
                    let key = (idx(na[0], na[1], na[2]), axis);
                    local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (val[a], val[b]);
                        let t = va / (va - vb);
                        let pa = na.map(coord);
                        let pb = nb.map(coord);
                        vertices.push(std::array::from_fn(|d| pa[d] + t * (pb[d] - pa[d])));
                        vertices.len() - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    // table winding is clockwise seen from outside; store counter-clockwise
                    triangles.push([local[tri[0] as usize], local[tri[2] as usize], local[tri[1] as usize]]);
                }
            }
        }
    }
    TriangleMesh { vertices, triangles }
}
