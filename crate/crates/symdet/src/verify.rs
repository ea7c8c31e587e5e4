//! Visibility-based verification: carve a voxel volume from the depth image
//! and reject symmetries whose transformed points land in known-free space.

use nalgebra::Vector3;

use crate::error::{Result, SymError};
use crate::geom::{
    reflect_point_raw, rotate_point_raw, CameraIntrinsics, SymmetryHypothesis, SymmetryKind,
};
use crate::matching::gamma_angles;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VoxelLabel {
    Unknown = 0,
    Free = 1,
    Observed = 2,
}

/// Voxel grid labeling space as observed / free / unknown from one depth
/// image, in the camera frame.
#[derive(Debug, Clone)]
pub struct VisibilityVolume {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    /// x-fastest layout: index = (z * dims[1] + y) * dims[0] + x.
    pub labels: Vec<VoxelLabel>,
}

impl VisibilityVolume {
    pub fn index_of(&self, p: &Vector3<f64>) -> Option<usize> {
        let rel = (p - self.origin) / self.voxel_size;
        let (x, y, z) = (rel.x.floor(), rel.y.floor(), rel.z.floor());
        if x < 0.0 || y < 0.0 || z < 0.0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some((z * self.dims[1] + y) * self.dims[0] + x)
    }

    pub fn label_at(&self, p: &Vector3<f64>) -> VoxelLabel {
        self.index_of(p).map_or(VoxelLabel::Unknown, |i| self.labels[i])
    }

    pub fn count(&self, label: VoxelLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Dump the grid for offline inspection: origin and voxel size as
    /// little-endian f64, dims as u32, then one byte per voxel (0 unknown,
    /// 1 free, 2 observed).
    pub fn dump(&self, path: &std::path::Path) -> Result<()> {
        use byteorder::{LittleEndian, WriteBytesExt};
        let mut buf = Vec::with_capacity(4 * 8 + 3 * 4 + self.labels.len());
        for v in [self.origin.x, self.origin.y, self.origin.z, self.voxel_size] {
            buf.write_f64::<LittleEndian>(v)?;
        }
        for d in self.dims {
            buf.write_u32::<LittleEndian>(d as u32)?;
        }
        buf.extend(self.labels.iter().map(|&l| l as u8));
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use byteorder::{LittleEndian, ReadBytesExt};
        let data = std::fs::read(path)?;
        let mut r = std::io::Cursor::new(&data);
        let mut head = [0.0; 4];
        for v in head.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let total = dims[0] * dims[1] * dims[2];
        let offset = r.position() as usize;
        if data.len() != offset + total {
            return Err(SymError::Parse("volume payload size mismatch".into()));
        }
        let labels = data[offset..]
            .iter()
            .map(|&b| match b {
                0 => Ok(VoxelLabel::Unknown),
                1 => Ok(VoxelLabel::Free),
                2 => Ok(VoxelLabel::Observed),
                _ => Err(SymError::Parse("bad voxel label".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            origin: Vector3::new(head[0], head[1], head[2]),
            voxel_size: head[3],
            dims,
            labels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VerifyParams {
    /// Violation budget at the reference point count.
    pub max_violations: f64,
    pub reference_points: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { max_violations: 50.0, reference_points: 1000.0 }
    }
}

impl VerifyParams {
    pub fn budget(&self, num_points: usize) -> f64 {
        self.max_violations * num_points as f64 / self.reference_points
    }
}

/// Default carving resolution: bounding-box diagonal / 64, floored at twice
/// the median point spacing when one is supplied.
pub fn default_voxel_size(bounds_diag: f64, median_spacing: Option<f64>) -> f64 {
    let base = bounds_diag / 64.0;
    match median_spacing {
        Some(s) => base.max(2.0 * s),
        None => base,
    }
}

/// Carve the visibility volume: every valid depth pixel shoots a ray from the
/// camera origin; voxels strictly between the camera and the surface sample
/// become Free, the surface voxel Observed, everything untouched stays
/// Unknown. Free voxels touching an Observed voxel are reset to Unknown to
/// shield grazing surfaces.
pub fn carve(
    depth: &[f64],
    intrinsics: &CameraIntrinsics,
    bounds: (Vector3<f64>, Vector3<f64>),
    voxel_size: f64,
) -> Result<VisibilityVolume> {
    intrinsics.validate()?;
    let (lo, hi) = bounds;
    if !(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z) || voxel_size <= 0.0 {
        return Err(SymError::Degenerate("degenerate carving bounds".into()));
    }
    let dims = [
        ((hi.x - lo.x) / voxel_size).ceil() as usize,
        ((hi.y - lo.y) / voxel_size).ceil() as usize,
        ((hi.z - lo.z) / voxel_size).ceil() as usize,
    ];
    let mut vol = VisibilityVolume {
        origin: lo,
        voxel_size,
        dims,
        labels: vec![VoxelLabel::Unknown; dims[0] * dims[1] * dims[2]],
    };

    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let z = depth[(v * intrinsics.width + u) as usize];
            if z <= 0.0 {
                continue;
            }
            let surface = intrinsics.unproject(u, v, z);
            let surface_idx = vol.index_of(&surface);
            carve_ray(&mut vol, &surface, surface_idx);
            if let Some(i) = surface_idx {
                vol.labels[i] = VoxelLabel::Observed;
            }
        }
    }

    dilate_observed_guard(&mut vol);
    Ok(vol)
}

/// March the segment camera-origin -> surface through the grid, marking
/// traversed voxels Free. The surface voxel itself is skipped and Observed is
/// never downgraded.
fn carve_ray(vol: &mut VisibilityVolume, surface: &Vector3<f64>, surface_idx: Option<usize>) {
    let dir = *surface; // camera sits at the origin
    let lo = vol.origin;
    let hi = vol.origin
        + Vector3::new(
            vol.dims[0] as f64 * vol.voxel_size,
            vol.dims[1] as f64 * vol.voxel_size,
            vol.dims[2] as f64 * vol.voxel_size,
        );
    // Clip [0,1] segment to the box.
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if lo[a] > 0.0 || hi[a] < 0.0 {
                return;
            }
        } else {
            let ta = lo[a] / dir[a];
            let tb = hi[a] / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 >= t1 {
        return;
    }

    // Amanatides-Woo traversal from the entry point.
    let entry = dir * (t0 + 1e-12);
    let rel = (entry - lo) / vol.voxel_size;
    let mut ix = (rel.x.floor() as i64).clamp(0, vol.dims[0] as i64 - 1);
    let mut iy = (rel.y.floor() as i64).clamp(0, vol.dims[1] as i64 - 1);
    let mut iz = (rel.z.floor() as i64).clamp(0, vol.dims[2] as i64 - 1);
    let mut idx = [ix, iy, iz];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if dir[a] > 1e-15 {
            step[a] = 1;
            t_max[a] = (lo[a] + (idx[a] + 1) as f64 * vol.voxel_size) / dir[a];
            t_delta[a] = vol.voxel_size / dir[a];
        } else if dir[a] < -1e-15 {
            step[a] = -1;
            t_max[a] = (lo[a] + idx[a] as f64 * vol.voxel_size) / dir[a];
            t_delta[a] = -vol.voxel_size / dir[a];
        }
    }
    let mut t = t0;
    while t < t1 {
        let flat = ((idx[2] * vol.dims[1] as i64 + idx[1]) * vol.dims[0] as i64 + idx[0]) as usize;
        if Some(flat) != surface_idx && vol.labels[flat] != VoxelLabel::Observed {
            vol.labels[flat] = VoxelLabel::Free;
        }
        // Advance to the next voxel boundary.
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        t_max[a] += t_delta[a];
        idx[a] += step[a];
        if idx[a] < 0
            || idx[a] >= vol.dims[a] as i64
        {
            break;
        }
        ix = idx[0];
        iy = idx[1];
        iz = idx[2];
        let _ = (ix, iy, iz);
    }
}

/// One-voxel dilation guard: Free voxels with an Observed 26-neighbor become
/// Unknown.
fn dilate_observed_guard(vol: &mut VisibilityVolume) {
    let [nx, ny, nz] = vol.dims;
    let mut demote = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if vol.labels[i] != VoxelLabel::Free {
                    continue;
                }
                'scan: for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if xx < 0 || yy < 0 || zz < 0 {
                                continue;
                            }
                            let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                            if xx >= nx || yy >= ny || zz >= nz {
                                continue;
                            }
                            if vol.labels[(zz * ny + yy) * nx + xx] == VoxelLabel::Observed {
                                demote.push(i);
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
    }
    for i in demote {
        vol.labels[i] = VoxelLabel::Unknown;
    }
}

/// Count points whose symmetry-transformed image lands in known-free space.
/// Rotational symmetries test every comparison angle; a point violates if any
/// angle lands it in Free. keep = count within the scaled budget.
pub fn verify_symmetry(
    sym: &SymmetryHypothesis,
    points: &[Vector3<f64>],
    vol: &VisibilityVolume,
    params: &VerifyParams,
) -> Result<(bool, usize)> {
    let mut violations = 0usize;
    match sym.kind {
        SymmetryKind::Reflectional => {
            for p in points {
                let q = reflect_point_raw(p, &sym.point, &sym.normal);
                if vol.label_at(&q) == VoxelLabel::Free {
                    violations += 1;
                }
            }
        }
        SymmetryKind::Rotational => {
            let angles = gamma_angles();
            for p in points {
                let hit = angles.iter().any(|&g| {
                    let q = rotate_point_raw(p, &sym.point, &sym.normal, g);
                    vol.label_at(&q) == VoxelLabel::Free
                });
                if hit {
                    violations += 1;
                }
            }
        }
    }
    let keep = (violations as f64) <= params.budget(points.len());
    Ok((keep, violations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ray_setup() -> (Vec<f64>, CameraIntrinsics) {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.5,
            cy: 0.5,
            width: 1,
            height: 1,
            depth_scale: 1e-4,
        };
        (vec![1.0], intr)
    }

    #[test]
    fn single_pixel_ray_carving() {
        let (depth, intr) = single_ray_setup();
        let lo = Vector3::new(-0.05, -0.05, 0.0);
        let hi = Vector3::new(0.05, 0.05, 1.05);
        let vol = carve(&depth, &intr, (lo, hi), 0.1).unwrap();
        assert_eq!(vol.dims, [1, 1, 11]);
        let observed = vol.count(VoxelLabel::Observed);
        let free = vol.count(VoxelLabel::Free);
        assert_eq!(observed, 1);
        // 10 voxels before the surface, one demoted by the dilation guard.
        assert!((8..=10).contains(&free), "free = {free}");
        // The surface voxel is Observed, the voxel behind it Unknown.
        assert_eq!(vol.label_at(&Vector3::new(0.0, 0.0, 1.0)), VoxelLabel::Observed);
        assert_eq!(vol.label_at(&Vector3::new(0.0, 0.0, 0.45)), VoxelLabel::Free);
    }

    #[test]
    fn voxel_behind_surface_is_unknown() {
        let (depth, intr) = single_ray_setup();
        let lo = Vector3::new(-0.05, -0.05, 0.0);
        let hi = Vector3::new(0.05, 0.05, 2.0);
        let vol = carve(&depth, &intr, (lo, hi), 0.1).unwrap();
        assert_eq!(vol.label_at(&Vector3::new(0.0, 0.0, 1.5)), VoxelLabel::Unknown);
    }

    #[test]
    fn all_invalid_depth_gives_all_unknown() {
        let intr = CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
            depth_scale: 1e-4,
        };
        let depth = vec![0.0; 16];
        let lo = Vector3::new(-1.0, -1.0, 0.0);
        let hi = Vector3::new(1.0, 1.0, 2.0);
        let vol = carve(&depth, &intr, (lo, hi), 0.25).unwrap();
        assert_eq!(vol.count(VoxelLabel::Unknown), vol.labels.len());
    }

    #[test]
    fn labels_partition_grid() {
        let (depth, intr) = single_ray_setup();
        let lo = Vector3::new(-0.2, -0.2, 0.0);
        let hi = Vector3::new(0.2, 0.2, 1.2);
        let vol = carve(&depth, &intr, (lo, hi), 0.05).unwrap();
        let total = vol.count(VoxelLabel::Unknown)
            + vol.count(VoxelLabel::Free)
            + vol.count(VoxelLabel::Observed);
        assert_eq!(total, vol.labels.len());
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let (depth, intr) = single_ray_setup();
        let lo = Vector3::new(0.0, 0.0, 0.0);
        assert!(carve(&depth, &intr, (lo, lo), 0.1).is_err());
    }

    #[test]
    fn empty_free_set_always_keeps() {
        let intr = CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
            depth_scale: 1e-4,
        };
        let depth = vec![0.0; 16];
        let vol = carve(
            &depth,
            &intr,
            (Vector3::new(-1.0, -1.0, 0.0), Vector3::new(1.0, 1.0, 2.0)),
            0.25,
        )
        .unwrap();
        let sym = SymmetryHypothesis::reflectional(Vector3::new(0.0, 0.0, 1.0), Vector3::x())
            .unwrap();
        let points: Vec<Vector3<f64>> =
            (0..100).map(|i| Vector3::new(0.0, 0.0, 0.5 + i as f64 * 0.01)).collect();
        let (keep, v) = verify_symmetry(&sym, &points, &vol, &VerifyParams::default()).unwrap();
        assert!(keep);
        assert_eq!(v, 0);
    }

    #[test]
    fn shrinking_voxels_keeps_behind_surface_unknown() {
        // Monotone carving sanity on an axis-aligned ray.
        let (depth, intr) = single_ray_setup();
        let behind = Vector3::new(0.0, 0.0, 1.31);
        for vs in [0.2, 0.1, 0.05, 0.025] {
            let vol = carve(
                &depth,
                &intr,
                (Vector3::new(-0.5, -0.5, 0.0), Vector3::new(0.5, 0.5, 2.0)),
                vs,
            )
            .unwrap();
            assert_ne!(vol.label_at(&behind), VoxelLabel::Free, "voxel size {vs}");
        }
    }

    #[test]
    fn volume_dump_roundtrip() {
        let (depth, intr) = single_ray_setup();
        let vol = carve(
            &depth,
            &intr,
            (Vector3::new(-0.5, -0.5, 0.0), Vector3::new(0.5, 0.5, 2.0)),
            0.1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.bin");
        vol.dump(&path).unwrap();
        let back = VisibilityVolume::load(&path).unwrap();
        assert_eq!(back.origin, vol.origin);
        assert_eq!(back.voxel_size, vol.voxel_size);
        assert_eq!(back.dims, vol.dims);
        assert_eq!(back.labels, vol.labels);
    }
}
