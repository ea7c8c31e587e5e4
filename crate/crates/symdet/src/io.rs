//! On-disk formats: ASCII PLY point clouds, 16-bit depth PNGs with a JSON
//! intrinsics sidecar, symmetry annotation JSON, and per-frame dataset
//! directories.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SymError};
use crate::geom::{CameraIntrinsics, ObjectScan, SymmetryHypothesis, SymmetryKind};

// ---------------------------------------------------------------------------
// PLY

/// Write an ASCII PLY with `x y z r g b` per vertex (colors as 0..255).
pub fn write_ply(path: &Path, points: &[Vector3<f64>], colors: &[[f64; 3]]) -> Result<()> {
    if points.len() != colors.len() {
        return Err(SymError::InvalidArgument("points/colors length mismatch".into()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    for c in ["red", "green", "blue"] {
        writeln!(w, "property uchar {c}")?;
    }
    writeln!(w, "end_header")?;
    for (p, c) in points.iter().zip(colors) {
        let rgb: Vec<u8> = c.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, rgb[0], rgb[1], rgb[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Read an ASCII PLY written by [`write_ply`] (or any x y z r g b layout).
pub fn read_ply(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[f64; 3]>)> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut lines = f.lines();
    let mut count: Option<usize> = None;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| SymError::Parse("truncated PLY header".into()))??;
        let line = line.trim().to_string();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| SymError::Parse("bad vertex count".into()))?,
            );
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| SymError::Parse("missing vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| SymError::Parse("truncated PLY body".into()))??;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() < 6 {
            return Err(SymError::Parse("vertex row too short".into()));
        }
        let f64s: Vec<f64> = vals[..6]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| SymError::Parse("bad number in PLY".into())))
            .collect::<Result<_>>()?;
        points.push(Vector3::new(f64s[0], f64s[1], f64s[2]));
        colors.push([f64s[3] / 255.0, f64s[4] / 255.0, f64s[5] / 255.0]);
    }
    Ok((points, colors))
}

// ---------------------------------------------------------------------------
// Images

/// Snap a depth value (meters) onto the 16-bit storage grid.
pub fn quantize_depth(z: f64, intr: &CameraIntrinsics) -> f64 {
    let units = (z / intr.depth_scale).round().clamp(0.0, u16::MAX as f64);
    units * intr.depth_scale
}

/// Write depth (meters) as a 16-bit grayscale PNG in `depth_scale` units.
pub fn write_depth_png(path: &Path, depth: &[f64], intr: &CameraIntrinsics) -> Result<()> {
    let (w, h) = (intr.width, intr.height);
    if depth.len() != (w * h) as usize {
        return Err(SymError::InvalidArgument("depth size mismatch".into()));
    }
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w, h);
    for (i, px) in img.pixels_mut().enumerate() {
        let units = (depth[i] / intr.depth_scale).round().clamp(0.0, u16::MAX as f64);
        *px = image::Luma([units as u16]);
    }
    img.save(path)?;
    Ok(())
}

/// Read a depth PNG back to meters.
pub fn read_depth_png(path: &Path, intr: &CameraIntrinsics) -> Result<Vec<f64>> {
    let img = image::open(path)?.into_luma16();
    if img.width() != intr.width || img.height() != intr.height {
        return Err(SymError::Parse("depth image size mismatch".into()));
    }
    Ok(img.pixels().map(|p| p.0[0] as f64 * intr.depth_scale).collect())
}

/// Write a boolean mask as an 8-bit grayscale PNG (255 = object).
pub fn write_mask_png(path: &Path, mask: &[bool], width: u32, height: u32) -> Result<()> {
    if mask.len() != (width * height) as usize {
        return Err(SymError::InvalidArgument("mask size mismatch".into()));
    }
    let mut img = image::GrayImage::new(width, height);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = image::Luma([if mask[i] { 255 } else { 0 }]);
    }
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)?.into_luma8();
    Ok(img.pixels().map(|p| p.0[0] >= 128).collect())
}

/// Write an RGB image with channels in [0,1] as an 8-bit PNG.
pub fn write_color_png(path: &Path, rgb: &[[f64; 3]], width: u32, height: u32) -> Result<()> {
    if rgb.len() != (width * height) as usize {
        return Err(SymError::InvalidArgument("color size mismatch".into()));
    }
    let mut img = image::RgbImage::new(width, height);
    for (i, px) in img.pixels_mut().enumerate() {
        let c = rgb[i];
        *px = image::Rgb([
            (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
            (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
            (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
        ]);
    }
    img.save(path)?;
    Ok(())
}

pub fn read_color_png(path: &Path) -> Result<Vec<[f64; 3]>> {
    let img = image::open(path)?.into_rgb8();
    Ok(img
        .pixels()
        .map(|p| [p.0[0] as f64 / 255.0, p.0[1] as f64 / 255.0, p.0[2] as f64 / 255.0])
        .collect())
}

// ---------------------------------------------------------------------------
// JSON sidecars

pub fn save_intrinsics(path: &Path, intr: &CameraIntrinsics) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(intr)? + "\n")?;
    Ok(())
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let intr: CameraIntrinsics = serde_json::from_str(&fs::read_to_string(path)?)?;
    intr.validate()?;
    Ok(intr)
}

#[derive(Debug, Serialize, Deserialize)]
struct SymmetryJson {
    kind: String,
    point: [f64; 3],
    normal: [f64; 3],
    order: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SymmetryFile {
    symmetries: Vec<SymmetryJson>,
}

/// Save symmetries as `{"symmetries":[{"kind":"ref"|"rot",...}]}`.
pub fn save_symmetries(path: &Path, syms: &[SymmetryHypothesis]) -> Result<()> {
    let file = SymmetryFile {
        symmetries: syms
            .iter()
            .map(|s| SymmetryJson {
                kind: match s.kind {
                    SymmetryKind::Reflectional => "ref".into(),
                    SymmetryKind::Rotational => "rot".into(),
                },
                point: [s.point.x, s.point.y, s.point.z],
                normal: [s.normal.x, s.normal.y, s.normal.z],
                order: s.order,
                confidence: if s.confidence == 1.0 { None } else { Some(s.confidence) },
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

pub fn load_symmetries(path: &Path) -> Result<Vec<SymmetryHypothesis>> {
    let file: SymmetryFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.symmetries
        .iter()
        .map(|j| {
            let point = Vector3::from(j.point);
            let normal = Vector3::from(j.normal);
            let sym = match j.kind.as_str() {
                "ref" => SymmetryHypothesis::reflectional(point, normal)?,
                "rot" => SymmetryHypothesis::rotational(point, normal, j.order.unwrap_or(0))?,
                other => {
                    return Err(SymError::Parse(format!("unknown symmetry kind {other:?}")))
                }
            };
            Ok(sym.with_confidence(j.confidence.unwrap_or(1.0)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Frame directories

/// Per-frame metadata stored alongside the images.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameMeta {
    pub frame_id: String,
    pub shape_id: String,
    pub shape_kind: String,
    pub split: String,
    pub occlusion_ratio: f64,
}

/// Build a scan from raw frame images; point order is row-major over masked
/// pixels with valid depth.
pub fn scan_from_images(
    depth: Vec<f64>,
    mask: Vec<bool>,
    color_image: &[[f64; 3]],
    intrinsics: CameraIntrinsics,
) -> Result<ObjectScan> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    if depth.len() != (w * h) as usize
        || mask.len() != depth.len()
        || color_image.len() != depth.len()
    {
        return Err(SymError::InvalidArgument("image size mismatch".into()));
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if mask[i] && depth[i] > 0.0 {
                points.push(intrinsics.unproject(u, v, depth[i]));
                colors.push(color_image[i]);
            }
        }
    }
    let scan = ObjectScan { points, colors, mask, intrinsics, depth };
    scan.validate()?;
    Ok(scan)
}

/// Reconstruct the full color image from a scan's per-point colors; pixels
/// outside the mask are black.
pub fn color_image_of(scan: &ObjectScan) -> Vec<[f64; 3]> {
    let (w, h) = (scan.intrinsics.width, scan.intrinsics.height);
    let mut img = vec![[0.0; 3]; (w * h) as usize];
    let mut k = 0usize;
    for i in 0..img.len() {
        if scan.mask[i] && scan.depth[i] > 0.0 {
            img[i] = scan.colors[k];
            k += 1;
        }
    }
    img
}

/// Write one dataset frame directory: depth.png, color.png, mask.png,
/// intrinsics.json, symmetries.json, meta.json.
pub fn write_frame(
    dir: &Path,
    scan: &ObjectScan,
    symmetries: &[SymmetryHypothesis],
    meta: &FrameMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let intr = &scan.intrinsics;
    write_depth_png(&dir.join("depth.png"), &scan.depth, intr)?;
    write_mask_png(&dir.join("mask.png"), &scan.mask, intr.width, intr.height)?;
    write_color_png(&dir.join("color.png"), &color_image_of(scan), intr.width, intr.height)?;
    save_intrinsics(&dir.join("intrinsics.json"), intr)?;
    save_symmetries(&dir.join("symmetries.json"), symmetries)?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Load a frame directory back; the scan's depth must have been stored via
/// [`write_frame`] so the round trip is exact.
pub fn load_frame(dir: &Path) -> Result<(ObjectScan, Vec<SymmetryHypothesis>, FrameMeta)> {
    let intr = load_intrinsics(&dir.join("intrinsics.json"))?;
    let depth = read_depth_png(&dir.join("depth.png"), &intr)?;
    let mask = read_mask_png(&dir.join("mask.png"))?;
    let color = read_color_png(&dir.join("color.png"))?;
    let scan = scan_from_images(depth, mask, &color, intr)?;
    let syms = load_symmetries(&dir.join("symmetries.json"))?;
    let meta: FrameMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    Ok((scan, syms, meta))
}

/// Sorted frame directories under `split_dir` (every subdirectory containing
/// a meta.json).
pub fn list_frames(split_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(split_dir)? {
        let path = entry?.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
