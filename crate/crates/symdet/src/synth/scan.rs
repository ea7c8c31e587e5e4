//! Virtual RGB-D scanning by ray casting, symmetry transfer to the camera
//! frame, and seeded occluder injection.

use nalgebra::{Isometry3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SymError};
use crate::geom::{CameraIntrinsics, ObjectScan, SymmetryHypothesis};
use crate::io::{color_image_of, quantize_depth, scan_from_images};
use crate::metrics::occlusion_ratio;
use crate::synth::mesh::Mesh;

/// Möller-Trumbore ray/triangle intersection; returns the ray parameter t.
fn ray_triangle(
    orig: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t > 1e-9 { Some(t) } else { None }
}

/// Ray-cast the camera-frame mesh into an RGB-D frame. Depth is quantized to
/// the intrinsics' storage grid and colors to the 8-bit grid so that a write/
/// load round trip is exact.
pub fn virtual_scan(mesh: &Mesh, intrinsics: &CameraIntrinsics) -> Result<ObjectScan> {
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let px = (w * h) as usize;
    let mut depth = vec![0.0f64; px];
    let mut mask = vec![false; px];
    let mut color = vec![[0.0f64; 3]; px];
    // Fixed directional light, flat Lambert shading with an ambient floor.
    let light = Vector3::new(-0.3, -0.5, -0.8).normalize();
    let origin = Vector3::zeros();

    // Precompute face bounding boxes in pixel space to skip most tests.
    let tris: Vec<([Vector3<f64>; 3], usize)> = mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(f, _)| mesh.face_area(*f) > 0.0)
        .map(|(f, t)| ([mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]], f))
        .collect();

    for v in 0..h {
        for u in 0..w {
            // Ray through the pixel center with dir.z = 1, so t equals depth.
            let dir = Vector3::new(
                (u as f64 + 0.5 - intrinsics.cx) / intrinsics.fx,
                (v as f64 + 0.5 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let mut best: Option<(f64, usize)> = None;
            for (verts, f) in &tris {
                if let Some(t) = ray_triangle(&origin, &dir, &verts[0], &verts[1], &verts[2]) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, *f));
                    }
                }
            }
            if let Some((t, f)) = best {
                let i = (v * w + u) as usize;
                let z = quantize_depth(t, intrinsics);
                if z <= 0.0 {
                    continue;
                }
                depth[i] = z;
                mask[i] = true;
                let n = mesh.face_normal(f);
                let shade = 0.35 + 0.65 * n.dot(&light).abs();
                let albedo = mesh.face_colors[f];
                color[i] = [
                    (albedo[0] * shade * 255.0).round().clamp(0.0, 255.0) / 255.0,
                    (albedo[1] * shade * 255.0).round().clamp(0.0, 255.0) / 255.0,
                    (albedo[2] * shade * 255.0).round().clamp(0.0, 255.0) / 255.0,
                ];
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(SymError::Degenerate("shape outside the camera frustum".into()));
    }
    scan_from_images(depth, mask, &color, *intrinsics)
}

/// Map model-frame symmetries through a rigid pose into the camera frame.
pub fn transfer_symmetries(
    symmetries: &[SymmetryHypothesis],
    pose: &Isometry3<f64>,
) -> Vec<SymmetryHypothesis> {
    symmetries
        .iter()
        .map(|s| {
            let point = (pose * nalgebra::Point3::from(s.point)).coords;
            let normal = pose.rotation * s.normal;
            let mut out = s.clone();
            out.point = point;
            out.normal = normal;
            out
        })
        .collect()
}

/// Draw a random object pose in front of the camera.
pub fn random_pose(rng: &mut impl Rng) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_euler_angles(
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(-1.2..1.2),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let z = rng.gen_range(1.2..1.7);
    let x = rng.gen_range(-0.12..0.12);
    let y = rng.gen_range(-0.12..0.12);
    Isometry3::from_parts(nalgebra::Translation3::new(x, y, z), rot)
}

/// Occlude the scan with a seeded rotated-square foreground mask sized by
/// bisection to hit `target_ratio` within +/-0.02 where reachable. Returns
/// the occluded scan and the achieved ratio.
pub fn inject_occluder(
    scan: &ObjectScan,
    target_ratio: f64,
    seed: u64,
) -> Result<(ObjectScan, f64)> {
    if !(0.0..1.0).contains(&target_ratio) {
        return Err(SymError::InvalidArgument("target ratio must be in [0,1)".into()));
    }
    if target_ratio == 0.0 {
        return Ok((scan.clone(), 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = scan.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let color = color_image_of(scan);

    // Center on a random masked pixel so small occluders still bite.
    let masked: Vec<usize> = (0..scan.mask.len()).filter(|&i| scan.mask[i]).collect();
    let ci = masked[rng.gen_range(0..masked.len())];
    let cx = (ci as u32 % w) as f64 + 0.5;
    let cy = (ci as u32 / w) as f64 + 0.5;
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (st, ct) = theta.sin_cos();

    let apply = |half: f64| -> Result<(Option<ObjectScan>, f64)> {
        let mut depth = scan.depth.clone();
        let mut mask = scan.mask.clone();
        for v in 0..h {
            for u in 0..w {
                let dx = u as f64 + 0.5 - cx;
                let dy = v as f64 + 0.5 - cy;
                // Rotated-square (convex polygon) inside test.
                let rx = ct * dx + st * dy;
                let ry = -st * dx + ct * dy;
                if rx.abs() <= half && ry.abs() <= half {
                    let i = (v * w + u) as usize;
                    depth[i] = 0.0;
                    mask[i] = false;
                }
            }
        }
        if !mask.iter().any(|&m| m) {
            return Ok((None, 1.0));
        }
        let occluded = scan_from_images(depth, mask, &color, intr)?;
        let ratio = occlusion_ratio(scan, &occluded)?;
        Ok((Some(occluded), ratio))
    };

    let mut lo = 0.0f64;
    let mut hi = ((w * w + h * h) as f64).sqrt();
    let mut best: Option<(ObjectScan, f64)> = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (occ, ratio) = apply(mid)?;
        if let Some(occ) = occ {
            let better = best
                .as_ref()
                .map_or(true, |(_, r)| (ratio - target_ratio).abs() < (r - target_ratio).abs());
            if better {
                best = Some((occ, ratio));
            }
        }
        if ratio < target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.ok_or_else(|| SymError::Degenerate("occluder covered the whole object".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::shapes::{make_box, make_revolve};
    use std::f64::consts::PI;

    fn intr64(fx: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            depth_scale: 1e-4,
        }
    }

    fn sphere_mesh(radius: f64, center_z: f64, rows: usize, segments: usize) -> Mesh {
        let profile: Vec<(f64, f64)> = (0..=rows)
            .map(|i| {
                let t = PI * i as f64 / rows as f64;
                (radius * t.sin(), center_z - radius * t.cos())
            })
            .collect();
        make_revolve(&profile, segments, [0.7, 0.7, 0.7], "s").unwrap().mesh
    }

    #[test]
    fn sphere_center_depth_and_disk_mask() {
        // Unit sphere at (0,0,2): front pole depth 1 m.
        let mesh = sphere_mesh(1.0, 2.0, 96, 96);
        let intr = intr64(64.0);
        let scan = virtual_scan(&mesh, &intr).unwrap();
        let center = (31 * 64 + 31) as usize;
        assert!(scan.mask[center]);
        assert!((scan.depth[center] - 1.0).abs() < 5e-3, "depth {}", scan.depth[center]);
        // Mask is a centered disk: symmetric under u <-> 63-u.
        for v in 0..64usize {
            for u in 0..64usize {
                assert_eq!(scan.mask[v * 64 + u], scan.mask[v * 64 + (63 - u)]);
            }
        }
    }

    #[test]
    fn frontal_plane_constant_depth() {
        let shape = make_box([0.4, 0.4, 0.2], [0.6, 0.3, 0.2], "b").unwrap();
        let mesh = shape.mesh.transformed(&Isometry3::translation(0.0, 0.0, 1.5));
        let intr = intr64(120.0);
        let scan = virtual_scan(&mesh, &intr).unwrap();
        let expect = quantize_depth(1.4, &intr);
        for (i, &m) in scan.mask.iter().enumerate() {
            if m {
                assert!((scan.depth[i] - expect).abs() < 1e-12);
            }
        }
        assert!(scan.len() > 100);
    }

    #[test]
    fn points_reproject_to_pixel_centers() {
        let mesh = sphere_mesh(0.25, 1.4, 48, 48);
        let intr = intr64(80.0);
        let scan = virtual_scan(&mesh, &intr).unwrap();
        let mut k = 0;
        for v in 0..64u32 {
            for u in 0..64u32 {
                let i = (v * 64 + u) as usize;
                if scan.mask[i] && scan.depth[i] > 0.0 {
                    let (pu, pv) = intr.project(&scan.points[k]);
                    assert!((pu - (u as f64 + 0.5)).abs() < 1e-6);
                    assert!((pv - (v as f64 + 0.5)).abs() < 1e-6);
                    k += 1;
                }
            }
        }
        assert_eq!(k, scan.len());
    }

    #[test]
    fn transfer_symmetries_cases() {
        let sym = SymmetryHypothesis::reflectional(Vector3::zeros(), Vector3::x()).unwrap();
        let id = Isometry3::identity();
        assert_eq!(transfer_symmetries(&[sym.clone()], &id)[0], sym);

        let shift = Isometry3::translation(0.1, 0.2, 0.3);
        let t = &transfer_symmetries(&[sym.clone()], &shift)[0];
        assert!((t.point - Vector3::new(0.1, 0.2, 0.3)).norm() < 1e-12);
        assert!((t.normal - Vector3::x()).norm() < 1e-12);

        let rot = Isometry3::rotation(Vector3::z() * std::f64::consts::FRAC_PI_2);
        let r = &transfer_symmetries(&[sym], &rot)[0];
        assert!((r.normal - Vector3::y()).norm() < 1e-9);
    }

    #[test]
    fn occluder_zero_target_is_identity() {
        let shape = make_box([0.2, 0.25, 0.3], [0.5; 3], "b").unwrap();
        let mesh = shape.mesh.transformed(&Isometry3::translation(0.0, 0.0, 1.5));
        let scan = virtual_scan(&mesh, &intr64(80.0)).unwrap();
        let (occ, ratio) = inject_occluder(&scan, 0.0, 5).unwrap();
        assert_eq!(ratio, 0.0);
        assert_eq!(occ.points, scan.points);
        assert_eq!(occ.depth, scan.depth);
    }

    #[test]
    fn occluder_hits_light_bucket() {
        let shape = make_box([0.2, 0.25, 0.3], [0.5; 3], "b").unwrap();
        let mesh = shape.mesh.transformed(&Isometry3::translation(0.0, 0.0, 1.5));
        let scan = virtual_scan(&mesh, &intr64(80.0)).unwrap();
        let (occ, ratio) = inject_occluder(&scan, 0.55, 9).unwrap();
        assert!((0.50..=0.60).contains(&ratio), "achieved {ratio}");
        assert!(occ.len() < scan.len());
        let direct = occlusion_ratio(&scan, &occ).unwrap();
        assert!((direct - ratio).abs() < 1e-12);
    }

    #[test]
    fn occluder_deterministic() {
        let shape = make_box([0.2, 0.25, 0.3], [0.5; 3], "b").unwrap();
        let mesh = shape.mesh.transformed(&Isometry3::translation(0.0, 0.0, 1.5));
        let scan = virtual_scan(&mesh, &intr64(80.0)).unwrap();
        let (a, ra) = inject_occluder(&scan, 0.3, 11).unwrap();
        let (b, rb) = inject_occluder(&scan, 0.3, 11).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn half_plane_occlusion_on_flat_square_is_half() {
        // Flat frontal square at constant depth: area weights are uniform,
        // so masking the left half gives ratio 0.5 exactly up to the pixel
        // split.
        let shape = make_box([0.4, 0.4, 0.05], [0.5; 3], "b").unwrap();
        let mesh = shape.mesh.transformed(&Isometry3::translation(0.0, 0.0, 1.5));
        let intr = intr64(120.0);
        let scan = virtual_scan(&mesh, &intr).unwrap();
        let mut depth = scan.depth.clone();
        let mut mask = scan.mask.clone();
        for v in 0..64u32 {
            for u in 0..32u32 {
                let i = (v * 64 + u) as usize;
                depth[i] = 0.0;
                mask[i] = false;
            }
        }
        let occ = scan_from_images(depth, mask, &color_image_of(&scan), intr).unwrap();
        let ratio = occlusion_ratio(&scan, &occ).unwrap();
        assert!((ratio - 0.5).abs() < 0.02, "ratio {ratio}");
    }
}
