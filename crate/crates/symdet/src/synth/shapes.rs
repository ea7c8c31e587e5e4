//! Procedural shape library with analytically known symmetry sets.

use nalgebra::{Isometry3, Vector3};
use rand::Rng;
use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Result, SymError};
use crate::geom::SymmetryHypothesis;
use crate::synth::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShapeKind {
    Box,
    Cylinder,
    Cone,
    ExtrudedNgon,
    Revolve,
    Composite,
    Blob,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::ExtrudedNgon => "ngon",
            ShapeKind::Revolve => "revolve",
            ShapeKind::Composite => "composite",
            ShapeKind::Blob => "blob",
        }
    }

    pub fn all() -> [ShapeKind; 7] {
        [
            ShapeKind::Box,
            ShapeKind::Cylinder,
            ShapeKind::Cone,
            ShapeKind::ExtrudedNgon,
            ShapeKind::Revolve,
            ShapeKind::Composite,
            ShapeKind::Blob,
        ]
    }
}

impl FromStr for ShapeKind {
    type Err = SymError;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SymError::InvalidArgument(format!("unknown shape kind {s:?}")))
    }
}

/// A procedural shape in its model frame with its known symmetry set.
#[derive(Debug, Clone)]
pub struct ProceduralShape {
    pub id: String,
    pub kind: ShapeKind,
    pub mesh: Mesh,
    /// Model-frame symmetries, confidence 1.
    pub symmetries: Vec<SymmetryHypothesis>,
}

fn plane(point: [f64; 3], normal: [f64; 3]) -> SymmetryHypothesis {
    SymmetryHypothesis::reflectional(Vector3::from(point), Vector3::from(normal).normalize())
        .unwrap()
}

fn axis(point: [f64; 3], dir: [f64; 3], order: u32) -> SymmetryHypothesis {
    SymmetryHypothesis::rotational(Vector3::from(point), Vector3::from(dir).normalize(), order)
        .unwrap()
}

fn quad_faces(a: usize, b: usize, c: usize, d: usize) -> [[usize; 3]; 2] {
    [[a, b, c], [a, c, d]]
}

/// Axis-aligned box centered at the origin. With three distinct extents its
/// symmetry set is the three coordinate planes.
pub fn make_box(dims: [f64; 3], albedo: [f64; 3], id: &str) -> Result<ProceduralShape> {
    if dims.iter().any(|&d| d <= 0.0) {
        return Err(SymError::InvalidArgument("box dims must be positive".into()));
    }
    let [hx, hy, hz] = [dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0];
    let mut vertices = Vec::new();
    for &z in &[-hz, hz] {
        for &y in &[-hy, hy] {
            for &x in &[-hx, hx] {
                vertices.push(Vector3::new(x, y, z));
            }
        }
    }
    // Vertex index: x bit 0, y bit 1, z bit 2.
    let quads = [
        [0, 2, 3, 1], // z = -hz (outward -z)
        [4, 5, 7, 6], // z = +hz
        [0, 1, 5, 4], // y = -hy
        [2, 6, 7, 3], // y = +hy
        [0, 4, 6, 2], // x = -hx
        [1, 3, 7, 5], // x = +hx
    ];
    let mut faces = Vec::new();
    for q in quads {
        faces.extend(quad_faces(q[0], q[1], q[2], q[3]));
    }
    let face_colors = vec![albedo; faces.len()];
    let symmetries = vec![
        plane([0.0; 3], [1.0, 0.0, 0.0]),
        plane([0.0; 3], [0.0, 1.0, 0.0]),
        plane([0.0; 3], [0.0, 0.0, 1.0]),
    ];
    Ok(ProceduralShape {
        id: id.into(),
        kind: ShapeKind::Box,
        mesh: Mesh::new(vertices, faces, face_colors)?,
        symmetries,
    })
}

fn lathe(profile: &[(f64, f64)], segments: usize, albedo: [f64; 3]) -> Result<Mesh> {
    if profile.len() < 2 || segments < 3 {
        return Err(SymError::InvalidArgument("lathe needs >= 2 profile rows".into()));
    }
    let mut vertices = Vec::new();
    for &(r, z) in profile {
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(r * a.cos(), r * a.sin(), z));
        }
    }
    let mut faces = Vec::new();
    for row in 0..profile.len() - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let a = row * segments + s;
            let b = row * segments + s1;
            let c = (row + 1) * segments + s1;
            let d = (row + 1) * segments + s;
            // Degenerate triangles (r = 0 rows) have zero area and are
            // harmless for both sampling and ray casting.
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let face_colors = vec![albedo; faces.len()];
    Mesh::new(vertices, faces, face_colors)
}

/// Closed circular cylinder about the z axis, centered at the origin.
/// Annotated with the continuous rotational axis and the horizontal
/// mid-plane; the infinite family of planes through the axis is left
/// unannotated to keep the ground-truth set finite.
pub fn make_cylinder(
    radius: f64,
    height: f64,
    segments: usize,
    albedo: [f64; 3],
    id: &str,
) -> Result<ProceduralShape> {
    if radius <= 0.0 || height <= 0.0 {
        return Err(SymError::InvalidArgument("cylinder dims must be positive".into()));
    }
    let h = height / 2.0;
    let profile = [(0.0, -h), (radius, -h), (radius, h), (0.0, h)];
    let mesh = lathe(&profile, segments, albedo)?;
    let symmetries = vec![axis([0.0; 3], [0.0, 0.0, 1.0], 0), plane([0.0; 3], [0.0, 0.0, 1.0])];
    Ok(ProceduralShape { id: id.into(), kind: ShapeKind::Cylinder, mesh, symmetries })
}

/// Closed cone, base at z = -h/2, apex at z = +h/2.
pub fn make_cone(
    radius: f64,
    height: f64,
    segments: usize,
    albedo: [f64; 3],
    id: &str,
) -> Result<ProceduralShape> {
    if radius <= 0.0 || height <= 0.0 {
        return Err(SymError::InvalidArgument("cone dims must be positive".into()));
    }
    let h = height / 2.0;
    let profile = [(0.0, -h), (radius, -h), (0.0, h)];
    let mesh = lathe(&profile, segments, albedo)?;
    let symmetries = vec![axis([0.0; 3], [0.0, 0.0, 1.0], 0)];
    Ok(ProceduralShape { id: id.into(), kind: ShapeKind::Cone, mesh, symmetries })
}

/// Regular n-gon prism about the z axis: order-n rotational symmetry, n
/// vertical mirror planes, and the horizontal mid-plane.
pub fn make_ngon(
    n: u32,
    radius: f64,
    height: f64,
    albedo: [f64; 3],
    id: &str,
) -> Result<ProceduralShape> {
    if !(3..=10).contains(&n) {
        return Err(SymError::InvalidArgument("ngon order must be in 3..=10".into()));
    }
    if radius <= 0.0 || height <= 0.0 {
        return Err(SymError::InvalidArgument("ngon dims must be positive".into()));
    }
    let h = height / 2.0;
    let n = n as usize;
    let mut vertices = Vec::new();
    for &z in &[-h, h] {
        for s in 0..n {
            let a = 2.0 * PI * s as f64 / n as f64;
            vertices.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom_center = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, -h));
    let top_center = vertices.len();
    vertices.push(Vector3::new(0.0, 0.0, h));
    let mut faces = Vec::new();
    for s in 0..n {
        let s1 = (s + 1) % n;
        // Side quad.
        faces.extend(quad_faces(s, s1, n + s1, n + s));
        // Caps.
        faces.push([bottom_center, s1, s]);
        faces.push([top_center, n + s, n + s1]);
    }
    let face_colors = vec![albedo; faces.len()];
    let mut symmetries = vec![
        axis([0.0; 3], [0.0, 0.0, 1.0], n as u32),
        plane([0.0; 3], [0.0, 0.0, 1.0]),
    ];
    // Mirror lines of a regular n-gon lie at angles k*pi/n from vertex 0;
    // the plane normal is the in-plane perpendicular of the mirror line.
    for k in 0..n {
        let a = PI * k as f64 / n as f64;
        symmetries.push(plane([0.0; 3], [-a.sin(), a.cos(), 0.0]));
    }
    Ok(ProceduralShape {
        id: id.into(),
        kind: ShapeKind::ExtrudedNgon,
        mesh: Mesh::new(vertices, faces, face_colors)?,
        symmetries,
    })
}

/// Surface of revolution over an irregular profile: continuous rotational
/// symmetry only.
pub fn make_revolve(
    profile: &[(f64, f64)],
    segments: usize,
    albedo: [f64; 3],
    id: &str,
) -> Result<ProceduralShape> {
    let mesh = lathe(profile, segments, albedo)?;
    let symmetries = vec![axis([0.0; 3], [0.0, 0.0, 1.0], 0)];
    Ok(ProceduralShape { id: id.into(), kind: ShapeKind::Revolve, mesh, symmetries })
}

/// Box base with a cylinder on top sharing the z axis: two vertical mirror
/// planes plus an order-2 rotational axis.
pub fn make_composite(
    box_dims: [f64; 3],
    cyl_radius: f64,
    cyl_height: f64,
    albedo_box: [f64; 3],
    albedo_cyl: [f64; 3],
    id: &str,
) -> Result<ProceduralShape> {
    let base = make_box(box_dims, albedo_box, "part")?;
    let cyl = make_cylinder(cyl_radius, cyl_height, 32, albedo_cyl, "part")?;
    let lift = Isometry3::translation(0.0, 0.0, box_dims[2] / 2.0 + cyl_height / 2.0);
    let mesh = base.mesh.merged(&cyl.mesh.transformed(&lift));
    let symmetries = vec![
        plane([0.0; 3], [1.0, 0.0, 0.0]),
        plane([0.0; 3], [0.0, 1.0, 0.0]),
        axis([0.0; 3], [0.0, 0.0, 1.0], 2),
    ];
    Ok(ProceduralShape { id: id.into(), kind: ShapeKind::Composite, mesh, symmetries })
}

/// Asymmetric shape: a box with every vertex perturbed; no symmetries.
pub fn make_blob(
    dims: [f64; 3],
    jitter: f64,
    albedo: [f64; 3],
    rng: &mut impl Rng,
    id: &str,
) -> Result<ProceduralShape> {
    let base = make_box(dims, albedo, "part")?;
    let mut mesh = base.mesh;
    for v in &mut mesh.vertices {
        *v += Vector3::new(
            rng.gen_range(-jitter..jitter),
            rng.gen_range(-jitter..jitter),
            rng.gen_range(-jitter..jitter),
        );
    }
    Ok(ProceduralShape { id: id.into(), kind: ShapeKind::Blob, mesh, symmetries: Vec::new() })
}

/// Draw a random instance of the given kind at desk scale (0.1-0.35 m).
pub fn random_shape(kind: ShapeKind, rng: &mut impl Rng, id: &str) -> Result<ProceduralShape> {
    let albedo = [
        rng.gen_range(0.25..0.95),
        rng.gen_range(0.25..0.95),
        rng.gen_range(0.25..0.95),
    ];
    match kind {
        ShapeKind::Box => {
            // Distinct extents keep the symmetry set at exactly 3 planes.
            let a = rng.gen_range(0.10..0.16);
            let b = rng.gen_range(0.18..0.24);
            let c = rng.gen_range(0.26..0.34);
            make_box([a, b, c], albedo, id)
        }
        ShapeKind::Cylinder => {
            let r = rng.gen_range(0.06..0.12);
            let h = rng.gen_range(0.16..0.32);
            make_cylinder(r, h, 48, albedo, id)
        }
        ShapeKind::Cone => {
            let r = rng.gen_range(0.08..0.14);
            let h = rng.gen_range(0.18..0.32);
            make_cone(r, h, 48, albedo, id)
        }
        ShapeKind::ExtrudedNgon => {
            // Low-order prisms keep the per-frame ground truth (n + 1 planes
            // and one axis) comfortably within the predictor's head budget.
            let n = rng.gen_range(3..=5);
            let r = rng.gen_range(0.08..0.14);
            let h = rng.gen_range(0.16..0.30);
            make_ngon(n, r, h, albedo, id)
        }
        ShapeKind::Revolve => {
            // Irregular vase profile, asymmetric in z.
            let r1 = rng.gen_range(0.05..0.09);
            let r2 = rng.gen_range(0.10..0.15);
            let r3 = rng.gen_range(0.03..0.06);
            let h = rng.gen_range(0.20..0.32);
            let profile = [
                (0.0, -h / 2.0),
                (r1, -h / 2.0),
                (r2, -h * 0.1),
                (r3, h * 0.35),
                (r3 * 1.3, h / 2.0),
                (0.0, h / 2.0),
            ];
            make_revolve(&profile, 48, albedo, id)
        }
        ShapeKind::Composite => {
            let a = rng.gen_range(0.14..0.18);
            let b = rng.gen_range(0.20..0.26);
            let c = rng.gen_range(0.08..0.12);
            let r = rng.gen_range(0.04..0.065);
            let h = rng.gen_range(0.10..0.18);
            let albedo2 = [albedo[1], albedo[2], albedo[0]];
            make_composite([a, b, c], r, h, albedo, albedo2, id)
        }
        ShapeKind::Blob => {
            let a = rng.gen_range(0.12..0.20);
            let b = rng.gen_range(0.16..0.24);
            let c = rng.gen_range(0.20..0.30);
            make_blob([a, b, c], 0.035, albedo, rng, id)
        }
    }
}
