//! Symmetry parameterizations, camera/point-cloud types, symmetry transforms,
//! and ground-truth counterpart/orbit computation.
//!
//! All coordinates are double precision in a right-handed camera frame with
//! +z pointing into the scene.

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SymError};

pub const UNIT_TOL: f64 = 1e-9;

/// Fraction of the bounding-box diagonal used as the counterpart / orbit
/// membership tolerance.
pub const MEMBERSHIP_TOL_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryKind {
    Reflectional,
    Rotational,
}

impl SymmetryKind {
    pub fn name(&self) -> &'static str {
        match self {
            SymmetryKind::Reflectional => "reflectional",
            SymmetryKind::Rotational => "rotational",
        }
    }
}

/// A reflection plane or rotation axis, with an optional discrete order for
/// rotational symmetries (0 = continuous) and a confidence in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryHypothesis {
    pub kind: SymmetryKind,
    /// A point on the plane / axis (meters, camera frame).
    pub point: Vector3<f64>,
    /// Unit plane normal / axis direction.
    pub normal: Vector3<f64>,
    /// Rotational order; None for reflectional, Some(0) for continuous,
    /// Some(r >= 2) for discrete.
    pub order: Option<u32>,
    pub confidence: f64,
}

impl SymmetryHypothesis {
    pub fn reflectional(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        Self::new(SymmetryKind::Reflectional, point, normal, None, 1.0)
    }

    pub fn rotational(point: Vector3<f64>, axis: Vector3<f64>, order: u32) -> Result<Self> {
        Self::new(SymmetryKind::Rotational, point, axis, Some(order), 1.0)
    }

    pub fn new(
        kind: SymmetryKind,
        point: Vector3<f64>,
        normal: Vector3<f64>,
        order: Option<u32>,
        confidence: f64,
    ) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(SymError::InvalidArgument(format!(
                "normal must be unit length, |n| = {}",
                normal.norm()
            )));
        }
        match (kind, order) {
            (SymmetryKind::Reflectional, Some(_)) => {
                return Err(SymError::InvalidArgument(
                    "order is only valid for rotational symmetries".into(),
                ))
            }
            (SymmetryKind::Rotational, Some(1)) => {
                return Err(SymError::InvalidArgument(
                    "rotational order must be 0 (continuous) or >= 2".into(),
                ))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(SymError::InvalidArgument(format!(
                "confidence must lie in [0,1], got {confidence}"
            )));
        }
        Ok(Self { kind, point, normal, order, confidence })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn is_reflectional(&self) -> bool {
        self.kind == SymmetryKind::Reflectional
    }

    pub fn is_rotational(&self) -> bool {
        self.kind == SymmetryKind::Rotational
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(SymError::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SymError::InvalidArgument("image size must be positive".into()));
        }
        if self.depth_scale <= 0.0 {
            return Err(SymError::InvalidArgument("depth_scale must be positive".into()));
        }
        Ok(())
    }

    /// Unproject pixel center (u, v) with depth z (meters) to the camera frame.
    pub fn unproject(&self, u: u32, v: u32, z: f64) -> Vector3<f64> {
        let x = (u as f64 + 0.5 - self.cx) * z / self.fx;
        let y = (v as f64 + 0.5 - self.cy) * z / self.fy;
        Vector3::new(x, y, z)
    }

    /// Project a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (p.x / p.z * self.fx + self.cx, p.y / p.z * self.fy + self.cy)
    }
}

/// Masked single-view observation: colored point cloud unprojected from an
/// RGB-D frame plus the camera intrinsics and raw depth / mask images.
#[derive(Debug, Clone)]
pub struct ObjectScan {
    pub points: Vec<Vector3<f64>>,
    /// RGB in [0,1], parallel to `points`.
    pub colors: Vec<[f64; 3]>,
    /// Per-pixel object mask, row-major, width*height.
    pub mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
    /// Per-pixel depth in meters, 0 = invalid, row-major.
    pub depth: Vec<f64>,
}

impl ObjectScan {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.points.is_empty() {
            return Err(SymError::InvalidArgument("scan must contain at least one point".into()));
        }
        if self.points.len() != self.colors.len() {
            return Err(SymError::InvalidArgument("points/colors length mismatch".into()));
        }
        let px = (self.intrinsics.width * self.intrinsics.height) as usize;
        if self.mask.len() != px || self.depth.len() != px {
            return Err(SymError::InvalidArgument("mask/depth size mismatch".into()));
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SymError::InvalidArgument("non-finite point".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Diagonal of the axis-aligned bounding box of the points.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.points)
    }
}

pub fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

pub fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    if points.is_empty() {
        return Vector3::zeros();
    }
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Dense boolean N x N pair mask.
#[derive(Debug, Clone)]
pub struct PairMask {
    n: usize,
    bits: Vec<bool>,
}

impl PairMask {
    pub fn new(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Per-point supervision for one scan: counterparts, foot points and
/// pair memberships for every annotated symmetry.
#[derive(Debug, Clone)]
pub struct GroundTruthLabel {
    pub symmetries: Vec<SymmetryHypothesis>,
    /// foot_points[s][i] = projection of point i onto symmetry s.
    pub foot_points: Vec<Vec<Vector3<f64>>>,
    /// counterparts[s][i] = reflected image of point i; None for rotational s.
    pub counterparts: Vec<Option<Vec<Vector3<f64>>>>,
    /// counterpart_membership[s] for reflectional s; None otherwise.
    pub counterpart_membership: Vec<Option<PairMask>>,
    /// orbit_membership[s] for rotational s; None otherwise.
    pub orbit_membership: Vec<Option<PairMask>>,
    /// Membership tolerance actually used (meters).
    pub tolerance: f64,
}

impl GroundTruthLabel {
    pub fn reflectional_indices(&self) -> Vec<usize> {
        self.symmetries
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_reflectional())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn rotational_indices(&self) -> Vec<usize> {
        self.symmetries
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_rotational())
            .map(|(i, _)| i)
            .collect()
    }
}

fn require_kind(sym: &SymmetryHypothesis, kind: SymmetryKind) -> Result<()> {
    if sym.kind != kind {
        return Err(SymError::KindMismatch {
            expected: kind.name(),
            got: sym.kind.name(),
        });
    }
    if (sym.normal.norm() - 1.0).abs() > UNIT_TOL {
        return Err(SymError::InvalidArgument("non-unit normal".into()));
    }
    Ok(())
}

/// Mirror `p` across the reflection plane of `sym`.
pub fn reflect_point(p: &Vector3<f64>, sym: &SymmetryHypothesis) -> Result<Vector3<f64>> {
    require_kind(sym, SymmetryKind::Reflectional)?;
    Ok(reflect_point_raw(p, &sym.point, &sym.normal))
}

#[inline]
pub fn reflect_point_raw(p: &Vector3<f64>, plane_point: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
    p - 2.0 * (p - plane_point).dot(n) * n
}

/// Rodrigues rotation of `p` about the axis of `sym` by `angle` radians.
pub fn rotate_point(p: &Vector3<f64>, sym: &SymmetryHypothesis, angle: f64) -> Result<Vector3<f64>> {
    require_kind(sym, SymmetryKind::Rotational)?;
    Ok(rotate_point_raw(p, &sym.point, &sym.normal, angle))
}

#[inline]
pub fn rotate_point_raw(
    p: &Vector3<f64>,
    axis_point: &Vector3<f64>,
    axis_dir: &Vector3<f64>,
    angle: f64,
) -> Vector3<f64> {
    let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(*axis_dir), angle);
    axis_point + rot * (p - axis_point)
}

/// Foot point of `p` on the reflection plane.
pub fn project_to_plane(p: &Vector3<f64>, sym: &SymmetryHypothesis) -> Result<Vector3<f64>> {
    require_kind(sym, SymmetryKind::Reflectional)?;
    Ok(p - (p - sym.point).dot(&sym.normal) * sym.normal)
}

/// Foot point of `p` on the rotation axis.
pub fn project_to_axis(p: &Vector3<f64>, sym: &SymmetryHypothesis) -> Result<Vector3<f64>> {
    require_kind(sym, SymmetryKind::Rotational)?;
    Ok(sym.point + (p - sym.point).dot(&sym.normal) * sym.normal)
}

/// Foot point for either kind.
pub fn foot_point(p: &Vector3<f64>, sym: &SymmetryHypothesis) -> Result<Vector3<f64>> {
    match sym.kind {
        SymmetryKind::Reflectional => project_to_plane(p, sym),
        SymmetryKind::Rotational => project_to_axis(p, sym),
    }
}

/// Coordinates of `q` in the local reference frame centered at `p`
/// (translation only; orientation equals the camera frame).
#[inline]
pub fn local_frame(p: &Vector3<f64>, q: &Vector3<f64>) -> Vector3<f64> {
    q - p
}

/// Distance from `q` to the circular orbit traced by `p` about the axis.
pub fn orbit_distance(
    q: &Vector3<f64>,
    p: &Vector3<f64>,
    sym: &SymmetryHypothesis,
) -> Result<f64> {
    require_kind(sym, SymmetryKind::Rotational)?;
    let fp = sym.point + (p - sym.point).dot(&sym.normal) * sym.normal;
    let fq = sym.point + (q - sym.point).dot(&sym.normal) * sym.normal;
    let rp = (p - fp).norm();
    let rq = (q - fq).norm();
    let axial = (fq - fp).norm();
    Ok(((rq - rp).powi(2) + axial.powi(2)).sqrt())
}

/// Fill counterpart / foot-point / membership supervision for every point of
/// `scan` against `syms`. Membership tolerance is 1% of the bounding-box
/// diagonal; a point on the plane is its own counterpart.
pub fn make_ground_truth(
    scan: &ObjectScan,
    syms: &[SymmetryHypothesis],
) -> Result<GroundTruthLabel> {
    make_ground_truth_points(&scan.points, syms)
}

/// Same as [`make_ground_truth`] but over a bare point set.
pub fn make_ground_truth_points(
    points: &[Vector3<f64>],
    syms: &[SymmetryHypothesis],
) -> Result<GroundTruthLabel> {
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let n = points.len();
    let tol = MEMBERSHIP_TOL_FRACTION * bbox_diagonal(points);

    let mut foot_points = Vec::with_capacity(syms.len());
    let mut counterparts = Vec::with_capacity(syms.len());
    let mut counterpart_membership = Vec::with_capacity(syms.len());
    let mut orbit_membership = Vec::with_capacity(syms.len());

    for sym in syms {
        let feet: Vec<Vector3<f64>> = points
            .iter()
            .map(|p| foot_point(p, sym))
            .collect::<Result<_>>()?;
        foot_points.push(feet);
        match sym.kind {
            SymmetryKind::Reflectional => {
                let cps: Vec<Vector3<f64>> =
                    points.iter().map(|p| reflect_point_raw(p, &sym.point, &sym.normal)).collect();
                let mut mask = PairMask::new(n);
                for i in 0..n {
                    for j in 0..n {
                        if (points[j] - cps[i]).norm() <= tol {
                            mask.set(i, j, true);
                        }
                    }
                }
                counterparts.push(Some(cps));
                counterpart_membership.push(Some(mask));
                orbit_membership.push(None);
            }
            SymmetryKind::Rotational => {
                let mut mask = PairMask::new(n);
                for i in 0..n {
                    for j in 0..n {
                        if orbit_distance(&points[j], &points[i], sym)? <= tol {
                            mask.set(i, j, true);
                        }
                    }
                }
                counterparts.push(None);
                counterpart_membership.push(None);
                orbit_membership.push(Some(mask));
            }
        }
    }

    Ok(GroundTruthLabel {
        symmetries: syms.to_vec(),
        foot_points,
        counterparts,
        counterpart_membership,
        orbit_membership,
        tolerance: tol,
    })
}
