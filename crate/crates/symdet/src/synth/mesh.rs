//! Triangle meshes with per-face albedo and area-weighted surface sampling.

use nalgebra::{Isometry3, Vector3};
use rand::Rng;

use crate::error::{Result, SymError};

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Flat albedo per face, rgb in [0,1].
    pub face_colors: Vec<[f64; 3]>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        face_colors: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if faces.len() != face_colors.len() {
            return Err(SymError::InvalidArgument("faces/colors length mismatch".into()));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(SymError::InvalidArgument("face index out of range".into()));
            }
        }
        Ok(Self { vertices, faces, face_colors })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let n = (b - a).cross(&(c - a));
        let l = n.norm();
        if l > 0.0 { n / l } else { Vector3::z() }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Apply a rigid transform to every vertex.
    pub fn transformed(&self, pose: &Isometry3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| pose * nalgebra::Point3::from(*v)).map(|p| p.coords).collect(),
            faces: self.faces.clone(),
            face_colors: self.face_colors.clone(),
        }
    }

    /// Concatenate two meshes.
    pub fn merged(&self, other: &Mesh) -> Mesh {
        let offset = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
        let mut face_colors = self.face_colors.clone();
        face_colors.extend_from_slice(&other.face_colors);
        Mesh { vertices, faces, face_colors }
    }

    /// Exact distance from `p` to the mesh surface (minimum over faces).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for f in &self.faces {
            let d = point_triangle_distance(
                p,
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            if d < best {
                best = d;
            }
        }
        best
    }

    /// Draw `n` points uniformly by surface area; returns points with their
    /// face albedo.
    pub fn sample_surface(
        &self,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<Vector3<f64>>, Vec<[f64; 3]>)> {
        let total = self.total_area();
        if total <= 0.0 || self.faces.is_empty() {
            return Err(SymError::Degenerate("mesh has no area".into()));
        }
        // Cumulative area table for inverse-CDF face selection.
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cdf.push(acc);
        }
        let mut points = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.gen::<f64>() * total;
            let f = cdf.partition_point(|&c| c < u).min(self.faces.len() - 1);
            let [a, b, c] = self.faces[f];
            let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            // Uniform barycentric sample via square-root warping.
            let r1 = rng.gen::<f64>().sqrt();
            let r2 = rng.gen::<f64>();
            let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
            points.push(p);
            colors.push(self.face_colors[f]);
        }
        Ok((points, colors))
    }
}

/// Distance from a point to a triangle (closest-point region walk).
pub fn point_triangle_distance(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm(); // vertex a
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm(); // vertex b
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm(); // edge ab
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm(); // vertex c
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm(); // edge ac
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm(); // edge bc
    }
    // Interior: distance along the normal.
    let denom = va + vb + vc;
    let v = vb / denom;
    let w = vc / denom;
    (ap - ab * v - ac * w).norm()
}
