//! Area-weighted surface sampling of triangle meshes.

use super::off::Mesh;
use super::{normalize_unit_sphere, PointCloud};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Draws `n` points on the mesh surface, each triangle chosen with
/// probability proportional to its area and the point placed by uniform
/// barycentric sampling, then normalizes the result to the unit sphere.
pub fn sample_mesh_surface(mesh: &Mesh, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Invalid("cannot sample 0 points".into()));
    }
    if mesh.triangles.is_empty() {
        return Err(Error::Invalid("mesh has no triangles to sample".into()));
    }
    // Cumulative areas for inverse-CDF triangle selection.
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Invalid("mesh has zero total surface area".into()));
    }

    let mut points = Array2::zeros((n, 3));
    for i in 0..n {
        let u = rng.gen::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c <= u).min(mesh.triangles.len() - 1);
        let t = mesh.triangles[ti];
        let (a, b, c) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        // Uniform barycentric coordinates via the square-root warp.
        let r1 = rng.gen::<f64>();
        let r2 = rng.gen::<f64>();
        let s1 = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s1, s1 * (1.0 - r2), s1 * r2);
        for k in 0..3 {
            points[[i, k]] = wa * a[k] + wb * b[k] + wc * c[k];
        }
    }
    Ok(normalize_unit_sphere(&PointCloud::new(points)?))
}
