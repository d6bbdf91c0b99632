//! Per-frame inputs: camera model, pose, and the bundle of depth, masks,
//! confidences and embeddings produced upstream by the segmentation models.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

const POSE_TOLERANCE: f64 = 1e-6;

/// Pinhole camera. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Continuous pixel coordinates of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Nearest pixel of a camera-frame point, if it lands inside the image.
    #[inline]
    pub fn project_to_pixel(&self, p: &Vector3<f64>) -> Option<(u32, u32)> {
        let (u, v) = self.project(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as u32, v as u32))
    }

    /// Camera-frame point at z-depth `depth` through pixel `(u, v)`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if let Some(rule) = pose.violation() {
            return Err(Error::InvalidArgument(rule));
        }
        Ok(pose)
    }

    /// Camera at `eye` looking at `target`; image y points along world `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidArgument("look_at: eye equals target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidArgument("look_at: up is parallel to view".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self> {
        let rotation = Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        );
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        let bottom = rows[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(format!(
                "pose bottom row must be [0 0 0 1], got {bottom:?}"
            )));
        }
        Self::new(rotation, translation)
    }

    fn violation(&self) -> Option<String> {
        let all_finite = self.rotation.iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite());
        if !all_finite {
            return Some("pose has non-finite entries".into());
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if err > POSE_TOLERANCE {
            return Some(format!("rotation not orthonormal (max |R·Rᵀ − I| = {err:.3e})"));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > POSE_TOLERANCE {
            return Some(format!("rotation determinant {det} ≠ +1"));
        }
        None
    }
}

/// Object-channel and environment-channel embeddings for one mask.
///
/// `environment` is empty when the archive carries no environment channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingPair {
    pub object: Vec<f32>,
    pub environment: Vec<f32>,
}

/// One time step of input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub index: u64,
    /// Meters; 0 marks a missing measurement.
    pub depth: Raster<f32>,
    pub pose: Pose,
    pub masks: Vec<Mask>,
    /// One map per mask, values in [0, 1].
    pub confidences: Vec<Raster<f32>>,
    pub embeddings: Vec<EmbeddingPair>,
    pub color: Option<Raster<[u8; 3]>>,
}

impl FrameBundle {
    pub fn mask_count(&self) -> usize {
        self.masks.len()
    }

    /// Snap depth and confidences to the archive's storage grids so that a
    /// write/read cycle reproduces the bundle bit for bit.
    pub fn quantized(&self, depth_scale: f64) -> Result<FrameBundle> {
        let raw = encode_depth(&self.depth, depth_scale)?;
        let depth = decode_depth(&raw, depth_scale)?;
        let confidences = self
            .confidences
            .iter()
            .map(|c| {
                Raster::from_vec(
                    c.width(),
                    c.height(),
                    c.data().iter().map(|&x| dequantize_confidence(quantize_confidence(x))).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameBundle {
            depth,
            confidences,
            ..self.clone()
        })
    }
}

/// One broken invariant found by [`validate_frame`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub const MASKS_NOT_DISJOINT: &str = "masks not disjoint";
pub const CONFIDENCE_OUT_OF_RANGE: &str = "confidence out of range";

/// Checks every bundle invariant against the archive's camera and embedding dims.
/// An empty report means the bundle is well formed.
pub fn validate_frame(
    bundle: &FrameBundle,
    intrinsics: &CameraIntrinsics,
    dims: Option<(usize, usize)>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: String| {
        out.push(Violation {
            field: field.to_string(),
            rule,
        })
    };
    let expected = (intrinsics.width, intrinsics.height);

    if bundle.depth.dims() != expected {
        push("depth", format!("dimensions {:?} differ from intrinsics {:?}", bundle.depth.dims(), expected));
    } else if bundle.depth.data().iter().any(|d| !d.is_finite() || *d < 0.0) {
        push("depth", "depth must be finite and non-negative".into());
    }

    if let Some(rule) = bundle.pose.violation() {
        push("pose", rule);
    }

    let k = bundle.masks.len();
    if bundle.confidences.len() != k {
        push("confidences", format!("{} confidence maps for {} masks", bundle.confidences.len(), k));
    }
    if bundle.embeddings.len() != k {
        push("embeddings", format!("{} embedding pairs for {} masks", bundle.embeddings.len(), k));
    }

    let mut masks_ok = true;
    for (i, m) in bundle.masks.iter().enumerate() {
        if m.dims() != expected {
            push("masks", format!("mask {i} dimensions {:?} differ from intrinsics {:?}", m.dims(), expected));
            masks_ok = false;
        }
    }
    if masks_ok && k > 1 {
        let mut union = Mask::empty(expected.0, expected.1);
        let mut total = 0usize;
        for m in &bundle.masks {
            total += m.count();
            for (u, v) in m.iter_set() {
                union.set(u, v);
            }
        }
        if total != union.count() {
            push("masks", MASKS_NOT_DISJOINT.into());
        }
    }

    for (i, c) in bundle.confidences.iter().enumerate() {
        if c.dims() != expected {
            push("confidences", format!("map {i} dimensions {:?} differ from intrinsics {:?}", c.dims(), expected));
        } else if c.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            push("confidences", format!("{CONFIDENCE_OUT_OF_RANGE} in map {i}"));
        }
    }

    for (i, e) in bundle.embeddings.iter().enumerate() {
        if e.object.iter().chain(&e.environment).any(|x| !x.is_finite()) {
            push("embeddings", format!("pair {i} has non-finite values"));
        }
        if let Some((d, d_env)) = dims {
            if e.object.len() != d || e.environment.len() != d_env {
                push(
                    "embeddings",
                    format!(
                        "pair {i} has dims ({}, {}), expected ({d}, {d_env})",
                        e.object.len(),
                        e.environment.len()
                    ),
                );
            }
        }
    }

    if let Some(color) = &bundle.color {
        if color.dims() != expected {
            push("color", format!("dimensions {:?} differ from intrinsics {:?}", color.dims(), expected));
        }
    }
    out
}

/// Converts a 16-bit depth raster to meters. Raw 0 stays 0 (invalid).
pub fn decode_depth(raw: &Raster<u16>, scale: f64) -> Result<Raster<f32>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {scale}")));
    }
    let data = raw
        .data()
        .iter()
        .map(|&r| (r as f64 * scale) as f32)
        .collect();
    Raster::from_vec(raw.width(), raw.height(), data)
}

/// Inverse of [`decode_depth`]; rounds to the nearest unit and saturates at `u16::MAX`.
pub fn encode_depth(depth: &Raster<f32>, scale: f64) -> Result<Raster<u16>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {scale}")));
    }
    let data = depth
        .data()
        .iter()
        .map(|&d| {
            if !(d > 0.0) {
                0
            } else {
                (d as f64 / scale).round().min(u16::MAX as f64) as u16
            }
        })
        .collect();
    Raster::from_vec(depth.width(), depth.height(), data)
}

#[inline]
pub fn quantize_confidence(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn dequantize_confidence(q: u8) -> f32 {
    q as f32 / 255.0
}
